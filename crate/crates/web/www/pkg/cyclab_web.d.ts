/* tslint:disable */
/* eslint-disable */

/**
 * One finished (or diverged) toy run held in wasm memory.
 */
export class ToySimulation {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Mean loss against episodes since each task's first visit.
     */
    alignedCurve(): Float64Array;
    /**
     * How well the 2-D layout after `epoch` follows task order around a circle.
     */
    circularOrder(epoch: number): number | undefined;
    /**
     * Interleaved `x, y` PCA coordinates of the inverse targets after `epoch`.
     */
    layout(epoch: number): Float64Array;
    /**
     * `family` is `"identity"` or `"reflect"`; the embedding dimension equals `n`.
     */
    constructor(family: string, n: number, tasks: number, epochs: number, seed: number, normalized: boolean);
    /**
     * Recovery score per revisit epoch; `NaN` where undefined.
     */
    recoveryScores(): Float64Array;
    /**
     * Episode at which the run overflowed, if it did.
     */
    readonly divergedAt: number | undefined;
    readonly epochs: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_toysimulation_free: (a: number, b: number) => void;
    readonly toysimulation_alignedCurve: (a: number) => [number, number, number, number];
    readonly toysimulation_circularOrder: (a: number, b: number) => [number, number];
    readonly toysimulation_divergedAt: (a: number) => number;
    readonly toysimulation_epochs: (a: number) => number;
    readonly toysimulation_layout: (a: number, b: number) => [number, number, number, number];
    readonly toysimulation_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly toysimulation_recoveryScores: (a: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
