/* tslint:disable */
/* eslint-disable */

/**
 * JavaScript handle; seeds are `u32` so plain numbers work.
 */
export class ConeDemo {
    free(): void;
    [Symbol.dispose](): void;
    epsLayer(): number;
    isTrivial(): boolean;
    layerOutputs(n: number, spread: number, seed: number, boxed: boolean): Float64Array;
    lineality(): Float64Array;
    maxViolation(points: Float64Array): number;
    constructor(normals: Float64Array, seed: number);
    project(x: number, y: number, boxed: boolean): Float64Array;
    rays(): Float64Array;
    reinit(seed: number): void;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_conedemo_free: (a: number, b: number) => void;
    readonly conedemo_epsLayer: (a: number) => number;
    readonly conedemo_isTrivial: (a: number) => number;
    readonly conedemo_layerOutputs: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly conedemo_lineality: (a: number) => [number, number];
    readonly conedemo_maxViolation: (a: number, b: number, c: number) => number;
    readonly conedemo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly conedemo_project: (a: number, b: number, c: number, d: number) => [number, number];
    readonly conedemo_rays: (a: number) => [number, number];
    readonly conedemo_reinit: (a: number, b: number) => void;
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
