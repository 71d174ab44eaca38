import { readFileSync } from "fs";

export class FigureError extends Error {
    constructor(message: string) {
        super(message);
        this.name = "FigureError";
    }
}

export interface Table {
    path: string;
    columns: string[];
    rows: Record<string, string>[];
}

/** Parse a simple comma-separated table (no quoting; the simulator never
 * emits quoted fields). Fails on empty tables so no empty figure is drawn. */
export function readCsv(path: string): Table {
    let text: string;
    try {
        text = readFileSync(path, "utf8");
    } catch {
        throw new FigureError(`cannot read CSV file ${path}`);
    }
    const lines = text.split(/\r?\n/).filter((line) => line.trim().length > 0);
    if (lines.length < 2) {
        throw new FigureError(`CSV ${path} has no data rows`);
    }
    const columns = lines[0].split(",").map((c) => c.trim());
    const rows = lines.slice(1).map((line) => {
        const cells = line.split(",");
        const row: Record<string, string> = {};
        columns.forEach((c, i) => {
            row[c] = (cells[i] ?? "").trim();
        });
        return row;
    });
    return { path, columns, rows };
}

export function requireColumns(table: Table, names: string[]): void {
    for (const name of names) {
        if (!table.columns.includes(name)) {
            throw new FigureError(
                `column "${name}" missing in ${table.path}; ` +
                `found: ${table.columns.join(", ")}`,
            );
        }
    }
}

export function numericColumn(table: Table, name: string): number[] {
    requireColumns(table, [name]);
    return table.rows.map((row) => {
        const v = Number(row[name]);
        if (!Number.isFinite(v)) {
            throw new FigureError(
                `non-numeric value "${row[name]}" in column "${name}" of ${table.path}`,
            );
        }
        return v;
    });
}

/** Distinct values of a column in first-appearance order. */
export function distinct(table: Table, name: string): string[] {
    requireColumns(table, [name]);
    const seen = new Set<string>();
    const out: string[] = [];
    for (const row of table.rows) {
        const v = row[name];
        if (!seen.has(v)) {
            seen.add(v);
            out.push(v);
        }
    }
    return out;
}
