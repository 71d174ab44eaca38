import { FigureError, Table, distinct, numericColumn, readCsv,
         requireColumns } from "./csv.js";
import { PALETTE, Scene, linearScale, logScale, loglogSlope, plotArea } from "./svg.js";

export type FigureKind =
    | "loglog_decay"
    | "error_vs_n"
    | "trajectory_overlay"
    | "concentration_frequency";

export interface FigureSpec {
    kind: FigureKind;
    input: string;
    output: string;
    title?: string;
    /** x/y column names where the kind does not fix them. */
    x?: string;
    y?: string;
    /** series grouping column (e.g. alpha); optional. */
    group?: string;
    /** restrict trajectory overlays to one test function id. */
    phi?: string;
}

export function parseSpec(raw: unknown): FigureSpec {
    const spec = raw as Partial<FigureSpec>;
    const kinds: FigureKind[] = ["loglog_decay", "error_vs_n",
        "trajectory_overlay", "concentration_frequency"];
    if (!spec.kind || !kinds.includes(spec.kind)) {
        throw new FigureError(
            `figure kind must be one of ${kinds.join(", ")}; got ${spec.kind}`);
    }
    if (!spec.input) throw new FigureError("figure spec needs an input CSV path");
    if (!spec.output) throw new FigureError("figure spec needs an output path");
    return spec as FigureSpec;
}

interface Series {
    label: string;
    xs: number[];
    ys: number[];
}

function groupedSeries(table: Table, xCol: string, yCol: string,
                       group?: string): Series[] {
    requireColumns(table, [xCol, yCol]);
    if (!group) {
        return [{
            label: yCol,
            xs: numericColumn(table, xCol),
            ys: numericColumn(table, yCol),
        }];
    }
    requireColumns(table, [group]);
    return distinct(table, group).map((value) => {
        const rows = table.rows.filter((r) => r[group] === value);
        return {
            label: `${group}=${value}`,
            xs: rows.map((r) => Number(r[xCol])),
            ys: rows.map((r) => Number(r[yCol])),
        };
    });
}

function logLogFigure(table: Table, spec: FigureSpec, xCol: string,
                      yCol: string, xLabel: string, yLabel: string,
                      title: string): string {
    const series = groupedSeries(table, xCol, yCol, spec.group);
    const allX = series.flatMap((s) => s.xs);
    const allY = series.flatMap((s) => s.ys).filter((v) => v > 0);
    if (allY.length === 0) {
        throw new FigureError(`no positive values in column "${yCol}"`);
    }
    const area = plotArea();
    const x = logScale(Math.min(...allX), Math.max(...allX), area.x0, area.x1);
    const y = logScale(Math.min(...allY), Math.max(...allY), area.y0, area.y1);
    const scene = new Scene(title);
    scene.axes(x, y, xLabel, yLabel);
    series.forEach((s, i) => {
        const color = PALETTE[i % PALETTE.length];
        const px = s.xs.map(x);
        const py = s.ys.map(y);
        scene.polyline(px, py, color);
        scene.dots(px, py, color);
        const slope = loglogSlope(s.xs, s.ys);
        scene.note(area.x0 + 10, area.y1 + 16 + 16 * i,
                   `${s.label}: slope ${slope.toFixed(2)}`, color);
    });
    if (series.length > 1) {
        scene.legend(series.map((s, i) => ({
            label: s.label, color: PALETTE[i % PALETTE.length],
        })));
    }
    return scene.render();
}

function trajectoryOverlay(table: Table, spec: FigureSpec): string {
    requireColumns(table, ["t", "phi", "sep_pairing", "pde_pairing", "replica"]);
    const phis = distinct(table, "phi");
    const phi = spec.phi ?? phis[0];
    if (!phis.includes(phi)) {
        throw new FigureError(
            `test function "${phi}" not present; found: ${phis.join(", ")}`);
    }
    const rows = table.rows.filter((r) => r.phi === phi);
    const replicas = [...new Set(rows.map((r) => r.replica))];
    const times = [...new Set(rows.map((r) => Number(r.t)))].sort((a, b) => a - b);
    const byReplica = replicas.map((rep) =>
        rows.filter((r) => r.replica === rep)
            .sort((a, b) => Number(a.t) - Number(b.t))
            .map((r) => Number(r.sep_pairing)));
    const pdeByTime = new Map(
        rows.filter((r) => r.replica === replicas[0])
            .map((r) => [Number(r.t), Number(r.pde_pairing)] as const));
    const pde = times.map((t) => pdeByTime.get(t) ?? NaN);

    const allVals = [...byReplica.flat(), ...pde];
    const area = plotArea();
    const x = linearScale(times[0], times[times.length - 1], area.x0, area.x1);
    const y = linearScale(Math.min(...allVals), Math.max(...allVals),
                          area.y0, area.y1);
    const scene = new Scene(spec.title ?? `pairing trajectories (${phi})`);
    scene.axes(x, y, "t", "pairing");
    const px = times.map(x);
    // replica band: pointwise min/max over replicas
    const upper = times.map((_, i) => Math.max(...byReplica.map((r) => r[i])));
    const lower = times.map((_, i) => Math.min(...byReplica.map((r) => r[i])));
    scene.band(px, upper.map(y), lower.map(y), PALETTE[0]);
    byReplica.forEach((vals) => {
        scene.polyline(px, vals.map(y), PALETTE[0], 0.8);
    });
    scene.polyline(px, pde.map(y), PALETTE[1], 2.5, "6,3");
    scene.legend([
        { label: `SEP replicas (${replicas.length})`, color: PALETTE[0] },
        { label: "PDE reference", color: PALETTE[1] },
    ]);
    return scene.render();
}

function concentrationFigure(table: Table, spec: FigureSpec): string {
    requireColumns(table, ["N", "freq"]);
    const ns = numericColumn(table, "N");
    const freqs = numericColumn(table, "freq");
    const area = plotArea();
    const x = logScale(Math.min(...ns), Math.max(...ns), area.x0, area.x1);
    const y = linearScale(0, Math.max(0.05, ...freqs), area.y0, area.y1);
    const scene = new Scene(spec.title ?? "sup-deviation exceedance frequency");
    scene.axes(x, y, "N", "frequency");
    scene.polyline(ns.map(x), freqs.map(y), PALETTE[0]);
    scene.dots(ns.map(x), freqs.map(y), PALETTE[0], 4);
    const delta = table.columns.includes("delta")
        ? Number(table.rows[0].delta) : NaN;
    if (Number.isFinite(delta)) {
        scene.note(area.x0 + 10, area.y1 + 16,
                   `threshold delta = ${delta.toPrecision(3)}`);
    }
    return scene.render();
}

/** Render the figure described by the spec; returns the SVG text. */
export function renderFigure(spec: FigureSpec): string {
    const table = readCsv(spec.input);
    switch (spec.kind) {
        case "loglog_decay":
            return logLogFigure(table, spec, spec.x ?? "h",
                                spec.y ?? "median_err", spec.x ?? "h",
                                spec.y ?? "median error",
                                spec.title ?? "error decay");
        case "error_vs_n":
            return logLogFigure(table, spec, spec.x ?? "N",
                                spec.y ?? "median_err", spec.x ?? "N",
                                spec.y ?? "median error",
                                spec.title ?? "consistency error vs N");
        case "trajectory_overlay":
            return trajectoryOverlay(table, spec);
        case "concentration_frequency":
            return concentrationFigure(table, spec);
    }
}
