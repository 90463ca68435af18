/* tslint:disable */
/* eslint-disable */

/**
 * Population net survival `L(H0(t))` of a PGW baseline under a frailty law
 * (`none`, `gamma` or `ig`), next to the conditional curve `exp(-H0(t))`.
 */
export function frailty_net_survival(family: string, variance: number, sigma: number, nu: number, gamma: number, horizon: number, points: number): Float64Array;

/**
 * PGW hazard and survival on `points` equally spaced times in
 * `[0, horizon]`: the first half of the result is the hazard, the second
 * the survival.
 */
export function pgw_curves(sigma: number, nu: number, gamma: number, horizon: number, points: number): Float64Array;

/**
 * Simulates one cohort of the four-covariate finite-sample scenario and
 * fits it; returns a plain-text table of truth, estimate and 95% interval.
 */
export function simulate_and_fit(n: number, seed: bigint, family: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly frailty_net_survival: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly pgw_curves: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly simulate_and_fit: (a: number, b: bigint, c: number, d: number) => [number, number, number, number];
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
