/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const __wbg_image_free: (a: number, b: number) => void;
export const demo_fbp: (a: number) => [number, number, number];
export const demo_new: (a: number, b: number, c: number) => [number, number, number];
export const demo_project: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
export const demo_reconstruct: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number, number];
export const demo_target: (a: number) => number;
export const demo_template: (a: number) => number;
export const image_height: (a: number) => number;
export const image_rgba: (a: number) => [number, number];
export const image_score: (a: number) => number;
export const image_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
