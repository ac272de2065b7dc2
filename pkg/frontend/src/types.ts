/** Payload types of the editing service HTTP contract. */

export interface RegionsResponse {
  names: string[];
  pairs: [number, number][];
  midline: number[];
  anchors: [number, number, number][];
  sigma: number;
}

export interface IdentityEntry {
  id: string;
  index: number;
}

export interface IdentitiesResponse {
  identities: IdentityEntry[];
}

export interface LatentStats {
  id_mean: number[];
  id_std: number[];
  exp_mean: number[];
  exp_std: number[];
  region_mean: number[][];
  region_std: number[][];
}

export type EditMode = 'sample' | 'swap' | 'reset';

export interface EditOp {
  region: number;
  mode: EditMode;
  source_id?: string;
  scale?: number;
  seed?: number;
}

export interface EditRequest {
  base: string;
  ops: EditOp[];
}

export interface MeshRequest {
  identity?: string;
  edit?: string;
  expression?: number[];
  resolution?: number;
}

export type JobState = 'queued' | 'running' | 'done' | 'failed';

export interface Job {
  id: string;
  kind: 'fit' | 'mesh' | 'edit-mesh';
  state: JobState;
  result: {
    mesh?: string;
    vertices?: number;
    faces?: number;
    has_displacement?: boolean;
  } | null;
  error: string | null;
}

export interface ApiError {
  code: string;
  message: string;
}
