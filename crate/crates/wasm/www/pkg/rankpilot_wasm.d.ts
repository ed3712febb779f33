/* tslint:disable */
/* eslint-disable */

/**
 * Reward-versus-error and punishment-versus-speedup curves.
 */
export function reward_curves(baseline_error: number, target_speedup: number, mode: string, points: number): string;

/**
 * A short controller search on the demo network.
 */
export function search(target_speedup: number, steps: number, seed: number, mode: string): string;

/**
 * Spectrum and truncation summary of a synthetic `rows×cols` matrix at `energy`.
 */
export function truncation(rows: number, cols: number, decay: number, seed: number, energy: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly reward_curves: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly search: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly truncation: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
