/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_desk_free: (a: number, b: number) => void;
export const __wbg_get_refinestats_final_loss: (a: number) => number;
export const __wbg_get_refinestats_gamma: (a: number) => number;
export const __wbg_get_refinestats_initial_loss: (a: number) => number;
export const __wbg_get_refinestats_median_rel_error: (a: number) => number;
export const __wbg_refinestats_free: (a: number, b: number) => void;
export const __wbg_set_refinestats_final_loss: (a: number, b: number) => void;
export const __wbg_set_refinestats_gamma: (a: number, b: number) => void;
export const __wbg_set_refinestats_initial_loss: (a: number, b: number) => void;
export const __wbg_set_refinestats_median_rel_error: (a: number, b: number) => void;
export const desk_depth: (a: number) => [number, number];
export const desk_height: (a: number) => number;
export const desk_image: (a: number) => [number, number];
export const desk_labels: (a: number) => [number, number];
export const desk_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const desk_refine: (a: number, b: number, c: number) => [number, number, number, number];
export const desk_scale: (a: number) => number;
export const desk_scale_curve: (a: number) => [number, number, number, number];
export const desk_stats: (a: number) => number;
export const desk_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
