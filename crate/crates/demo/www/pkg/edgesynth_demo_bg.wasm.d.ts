/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_edge_count: (a: number) => number;
export const demo_fuse: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_image_rgba: (a: number) => [number, number];
export const demo_mask_rgba: (a: number) => [number, number];
export const demo_new: (a: number, b: number) => [number, number, number];
export const demo_score: (a: number, b: number) => [number, number, number, number];
export const demo_scores_summary: (a: number) => [number, number];
export const demo_shape_transform: (a: number, b: number) => [number, number, number, number];
export const demo_size: (a: number) => number;
export const demo_transform_summary: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
