/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    edge_count(): number;
    /**
     * Re-runs Canny and fusion; returns the fused label as RGBA.
     */
    fuse(sigma: number, high_quantile: number, low_ratio: number): Uint8Array;
    image_rgba(): Uint8Array;
    mask_rgba(): Uint8Array;
    /**
     * A `size`×`size` toy sample for `seed`, fused with default Canny settings.
     */
    constructor(seed: number, size: number);
    /**
     * Overlay of a darkness-threshold prediction against the mask.
     */
    score(threshold: number): Uint8Array;
    scores_summary(): string;
    /**
     * Rotation, reflection, upscale and crop drawn from `seed`, applied to
     * the current fused label.
     */
    shape_transform(seed: number): Uint8Array;
    size(): number;
    transform_summary(): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_edge_count: (a: number) => number;
    readonly demo_fuse: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_image_rgba: (a: number) => [number, number];
    readonly demo_mask_rgba: (a: number) => [number, number];
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_score: (a: number, b: number) => [number, number, number, number];
    readonly demo_scores_summary: (a: number) => [number, number];
    readonly demo_shape_transform: (a: number, b: number) => [number, number, number, number];
    readonly demo_size: (a: number) => number;
    readonly demo_transform_summary: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
