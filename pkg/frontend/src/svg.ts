/** Minimal deterministic SVG scene builder: fixed canvas, fixed styles,
 * fixed number formatting, no timestamps or generated ids. */

export const WIDTH = 640;
export const HEIGHT = 420;
export const MARGIN = { left: 72, right: 24, top: 40, bottom: 56 };

export const PALETTE = [
    "#1f6fb2", "#d1495b", "#3d8361", "#8e6fb2", "#c78a2d", "#4f6d7a",
];

export function fmt(v: number): string {
    if (!Number.isFinite(v)) return "0";
    const s = v.toFixed(2);
    return s === "-0.00" ? "0.00" : s;
}

export interface Scale {
    (v: number): number;
    ticks: number[];
    label: (v: number) => string;
}

function niceTicks(lo: number, hi: number, count = 5): number[] {
    if (!(hi > lo)) return [lo];
    const span = hi - lo;
    const step = Math.pow(10, Math.floor(Math.log10(span / count)));
    const err = span / count / step;
    const mult = err >= 7.5 ? 10 : err >= 3.5 ? 5 : err >= 1.5 ? 2 : 1;
    const s = step * mult;
    const start = Math.ceil(lo / s) * s;
    const ticks: number[] = [];
    for (let v = start; v <= hi + 1e-12 * span; v += s) ticks.push(v);
    return ticks;
}

export function linearScale(lo: number, hi: number, a: number, b: number): Scale {
    if (hi === lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    const scale = ((v: number) => a + ((v - lo) / (hi - lo)) * (b - a)) as Scale;
    scale.ticks = niceTicks(lo, hi);
    scale.label = (v) => formatTick(v);
    return scale;
}

export function logScale(lo: number, hi: number, a: number, b: number): Scale {
    const l0 = Math.log10(lo);
    const l1 = Math.log10(hi);
    const lin = linearScale(l0, l1, a, b);
    const scale = ((v: number) => lin(Math.log10(v))) as Scale;
    const ticks: number[] = [];
    for (let e = Math.ceil(l0 - 1e-9); e <= Math.floor(l1 + 1e-9); e++) {
        ticks.push(Math.pow(10, e));
    }
    if (ticks.length < 2) {
        scale.ticks = niceTicks(lo, hi, 4);
    } else {
        scale.ticks = ticks;
    }
    scale.label = (v) => formatTick(v);
    return scale;
}

function formatTick(v: number): string {
    const a = Math.abs(v);
    if (a === 0) return "0";
    if (a >= 0.01 && a < 10000) {
        return String(Number(v.toPrecision(4)));
    }
    return v.toExponential(1).replace("e+", "e");
}

export class Scene {
    private parts: string[] = [];

    constructor(title: string) {
        this.parts.push(
            `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" ` +
            `height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}" ` +
            `font-family="Helvetica, Arial, sans-serif">`,
            `<rect width="${WIDTH}" height="${HEIGHT}" fill="#ffffff"/>`,
            `<text x="${WIDTH / 2}" y="24" text-anchor="middle" ` +
            `font-size="15" fill="#222222">${escapeText(title)}</text>`,
        );
    }

    axes(x: Scale, y: Scale, xLabel: string, yLabel: string): void {
        const { left, right, top, bottom } = MARGIN;
        const x0 = left;
        const x1 = WIDTH - right;
        const y0 = HEIGHT - bottom;
        const y1 = top;
        this.parts.push(
            `<line x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}" stroke="#333333"/>`,
            `<line x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}" stroke="#333333"/>`,
        );
        for (const t of x.ticks) {
            const px = fmt(x(t));
            this.parts.push(
                `<line x1="${px}" y1="${y0}" x2="${px}" y2="${y0 + 5}" stroke="#333333"/>`,
                `<text x="${px}" y="${y0 + 20}" text-anchor="middle" ` +
                `font-size="11" fill="#333333">${x.label(t)}</text>`,
            );
        }
        for (const t of y.ticks) {
            const py = fmt(y(t));
            this.parts.push(
                `<line x1="${x0 - 5}" y1="${py}" x2="${x0}" y2="${py}" stroke="#333333"/>`,
                `<text x="${x0 - 8}" y="${py}" text-anchor="end" ` +
                `dominant-baseline="middle" font-size="11" fill="#333333">` +
                `${y.label(t)}</text>`,
            );
        }
        this.parts.push(
            `<text x="${(x0 + x1) / 2}" y="${HEIGHT - 14}" text-anchor="middle" ` +
            `font-size="12" fill="#222222">${escapeText(xLabel)}</text>`,
            `<text x="18" y="${(y0 + y1) / 2}" text-anchor="middle" ` +
            `font-size="12" fill="#222222" transform="rotate(-90 18 ${(y0 + y1) / 2})">` +
            `${escapeText(yLabel)}</text>`,
        );
    }

    polyline(xs: number[], ys: number[], color: string, width = 1.5,
             dash?: string): void {
        const pts = xs.map((v, i) => `${fmt(v)},${fmt(ys[i])}`).join(" ");
        const dashAttr = dash ? ` stroke-dasharray="${dash}"` : "";
        this.parts.push(
            `<polyline points="${pts}" fill="none" stroke="${color}" ` +
            `stroke-width="${width}"${dashAttr}/>`,
        );
    }

    band(xs: number[], upper: number[], lower: number[], color: string): void {
        const fwd = xs.map((v, i) => `${fmt(v)},${fmt(upper[i])}`);
        const bwd = xs.map((v, i) => `${fmt(v)},${fmt(lower[i])}`).reverse();
        this.parts.push(
            `<polygon points="${[...fwd, ...bwd].join(" ")}" fill="${color}" ` +
            `fill-opacity="0.25" stroke="none"/>`,
        );
    }

    dots(xs: number[], ys: number[], color: string, r = 3): void {
        for (let i = 0; i < xs.length; i++) {
            this.parts.push(
                `<circle cx="${fmt(xs[i])}" cy="${fmt(ys[i])}" r="${r}" ` +
                `fill="${color}"/>`,
            );
        }
    }

    note(x: number, y: number, text: string, color = "#222222"): void {
        this.parts.push(
            `<text x="${fmt(x)}" y="${fmt(y)}" font-size="12" fill="${color}">` +
            `${escapeText(text)}</text>`,
        );
    }

    legend(entries: { label: string; color: string }[]): void {
        const x = WIDTH - MARGIN.right - 160;
        let y = MARGIN.top + 6;
        for (const e of entries) {
            this.parts.push(
                `<line x1="${x}" y1="${y}" x2="${x + 22}" y2="${y}" ` +
                `stroke="${e.color}" stroke-width="2"/>`,
                `<text x="${x + 28}" y="${y + 4}" font-size="11" ` +
                `fill="#222222">${escapeText(e.label)}</text>`,
            );
            y += 16;
        }
    }

    render(): string {
        return [...this.parts, "</svg>", ""].join("\n");
    }
}

function escapeText(s: string): string {
    return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function plotArea() {
    return {
        x0: MARGIN.left,
        x1: WIDTH - MARGIN.right,
        y0: HEIGHT - MARGIN.bottom,
        y1: MARGIN.top,
    };
}

/** Least-squares slope of log10(y) against log10(x). */
export function loglogSlope(xs: number[], ys: number[]): number {
    const pts = xs.map((x, i) => [Math.log10(x), Math.log10(ys[i])])
        .filter(([a, b]) => Number.isFinite(a) && Number.isFinite(b));
    const n = pts.length;
    if (n < 2) return NaN;
    const mx = pts.reduce((acc, p) => acc + p[0], 0) / n;
    const my = pts.reduce((acc, p) => acc + p[1], 0) / n;
    let num = 0;
    let den = 0;
    for (const [a, b] of pts) {
        num += (a - mx) * (b - my);
        den += (a - mx) * (a - mx);
    }
    return num / den;
}
