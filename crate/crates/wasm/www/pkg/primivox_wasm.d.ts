/* tslint:disable */
/* eslint-disable */

export class Desk {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Ground-truth metric depth; 0 for sky.
     */
    depth(): Float32Array;
    height(): number;
    /**
     * First channel of the target image, row-major in [0, 1].
     */
    image(): Float32Array;
    labels(): Uint8Array;
    /**
     * Renders the desk scene and corrupts its depth with `d = lambda·d_rel + gamma`.
     */
    constructor(width: number, height: number, lambda: number, gamma: number);
    refine(iterations: number, learning_rate: number): Float64Array;
    /**
     * Chosen scale of the last sweep, 0 before any.
     */
    scale(): number;
    /**
     * Photometric loss for every integer scale from 1 to 100.
     */
    scale_curve(): Float64Array;
    stats(): RefineStats | undefined;
    width(): number;
}

/**
 * Summary of the last refinement.
 */
export class RefineStats {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    final_loss: number;
    gamma: number;
    initial_loss: number;
    median_rel_error: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_desk_free: (a: number, b: number) => void;
    readonly __wbg_get_refinestats_final_loss: (a: number) => number;
    readonly __wbg_get_refinestats_gamma: (a: number) => number;
    readonly __wbg_get_refinestats_initial_loss: (a: number) => number;
    readonly __wbg_get_refinestats_median_rel_error: (a: number) => number;
    readonly __wbg_refinestats_free: (a: number, b: number) => void;
    readonly __wbg_set_refinestats_final_loss: (a: number, b: number) => void;
    readonly __wbg_set_refinestats_gamma: (a: number, b: number) => void;
    readonly __wbg_set_refinestats_initial_loss: (a: number, b: number) => void;
    readonly __wbg_set_refinestats_median_rel_error: (a: number, b: number) => void;
    readonly desk_depth: (a: number) => [number, number];
    readonly desk_height: (a: number) => number;
    readonly desk_image: (a: number) => [number, number];
    readonly desk_labels: (a: number) => [number, number];
    readonly desk_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly desk_refine: (a: number, b: number, c: number) => [number, number, number, number];
    readonly desk_scale: (a: number) => number;
    readonly desk_scale_curve: (a: number) => [number, number, number, number];
    readonly desk_stats: (a: number) => number;
    readonly desk_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
