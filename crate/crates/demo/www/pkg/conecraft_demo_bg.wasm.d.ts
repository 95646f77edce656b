/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_conedemo_free: (a: number, b: number) => void;
export const conedemo_epsLayer: (a: number) => number;
export const conedemo_isTrivial: (a: number) => number;
export const conedemo_layerOutputs: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const conedemo_lineality: (a: number) => [number, number];
export const conedemo_maxViolation: (a: number, b: number, c: number) => number;
export const conedemo_new: (a: number, b: number, c: number) => [number, number, number];
export const conedemo_project: (a: number, b: number, c: number, d: number) => [number, number];
export const conedemo_rays: (a: number) => [number, number];
export const conedemo_reinit: (a: number, b: number) => void;
export const __externref_table_alloc: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
