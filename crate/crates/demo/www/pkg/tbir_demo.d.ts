/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    fbp(): Image;
    /**
     * `kind` is one of `disk_pair`, `blob_warp`, `affine_warp`, `contrast_rotation`.
     */
    constructor(kind: string, m: number);
    /**
     * Noisy projections at `count` angles from `[0, span_deg]`; returns the sinogram (angles along x).
     */
    project(count: number, span_deg: number, noise: number, seed: bigint): Image;
    reconstruct(pde: string, distance: string, reg: string, gamma: number, k_min: number, max_iters: number): Image;
    target(): Image;
    template(): Image;
}

/**
 * Greyscale image as RGBA bytes, second axis pointing up, plus its score against the target.
 */
export class Image {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly height: number;
    readonly rgba: Uint8Array;
    /**
     * SSIM against the target; NaN where it does not apply.
     */
    readonly score: number;
    readonly width: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly __wbg_image_free: (a: number, b: number) => void;
    readonly demo_fbp: (a: number) => [number, number, number];
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_project: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
    readonly demo_reconstruct: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number, number];
    readonly demo_target: (a: number) => number;
    readonly demo_template: (a: number) => number;
    readonly image_height: (a: number) => number;
    readonly image_rgba: (a: number) => [number, number];
    readonly image_score: (a: number) => number;
    readonly image_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
