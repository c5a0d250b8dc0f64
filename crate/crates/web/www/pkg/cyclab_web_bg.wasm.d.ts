/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_toysimulation_free: (a: number, b: number) => void;
export const toysimulation_alignedCurve: (a: number) => [number, number, number, number];
export const toysimulation_circularOrder: (a: number, b: number) => [number, number];
export const toysimulation_divergedAt: (a: number) => number;
export const toysimulation_epochs: (a: number) => number;
export const toysimulation_layout: (a: number, b: number) => [number, number, number, number];
export const toysimulation_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const toysimulation_recoveryScores: (a: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
