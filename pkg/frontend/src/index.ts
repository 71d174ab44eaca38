export { FigureError, readCsv, requireColumns, numericColumn } from "./csv.js";
export { FigureKind, FigureSpec, parseSpec, renderFigure } from "./figures.js";
export { loglogSlope } from "./svg.js";
