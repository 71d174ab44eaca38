#!/usr/bin/env node
import { mkdirSync, readFileSync, writeFileSync } from "fs";
import { dirname, extname } from "path";

import { FigureError } from "./csv.js";
import { parseSpec, renderFigure } from "./figures.js";

function usage(): never {
    console.error(
        "usage: sepsim-figures render <figure-spec.json> [--out <path>]\n" +
        "       output format follows the extension (.svg or .png)");
    process.exit(2);
}

async function toPng(svg: string): Promise<Buffer> {
    const { Resvg } = await import("@resvg/resvg-js");
    const resvg = new Resvg(svg, { font: { loadSystemFonts: false } });
    return resvg.render().asPng();
}

export async function main(argv: string[]): Promise<number> {
    if (argv.length < 2 || argv[0] !== "render") usage();
    const specPath = argv[1];
    let outOverride: string | undefined;
    for (let i = 2; i < argv.length; i++) {
        if (argv[i] === "--out" && argv[i + 1]) {
            outOverride = argv[++i];
        } else {
            usage();
        }
    }
    try {
        const spec = parseSpec(JSON.parse(readFileSync(specPath, "utf8")));
        if (outOverride) spec.output = outOverride;
        const svg = renderFigure(spec);
        mkdirSync(dirname(spec.output), { recursive: true });
        const ext = extname(spec.output).toLowerCase();
        if (ext === ".png") {
            writeFileSync(spec.output, await toPng(svg));
        } else {
            writeFileSync(spec.output, svg);
        }
        console.log(`wrote ${spec.output}`);
        return 0;
    } catch (err) {
        if (err instanceof FigureError) {
            console.error(`error: ${err.message}`);
            return 1;
        }
        throw err;
    }
}

const isMain = process.argv[1] && import.meta.url.endsWith(
    process.argv[1].split("/").pop() ?? "");
if (isMain) {
    main(process.argv.slice(2)).then((code) => process.exit(code));
}
