/** Editing session state: the applied op list, undo/redo stacks over edit
 * ids, the current mesh, and expression slider values.
 *
 * The session never computes geometry itself. Every mesh and every number it
 * exposes came from a service response, and replaying the op list against
 * /api/edits always reproduces the current edit id (the service hashes the
 * op list into the id).
 */

import type { Job, EditOp, MeshRequest } from './types';
import { LatestJobTracker, pollJob } from './polling';

/** The slice of the service client the session depends on (mockable). */
export interface EditingApi {
  createEdit(base: string, ops: EditOp[]): Promise<string>;
  requestMesh(req: MeshRequest): Promise<string>;
  getJob(jobId: string): Promise<Job>;
  getMeshText(jobId: string): Promise<string>;
  getDisplacement(jobId: string): Promise<number[]>;
}

export interface MeshState {
  jobId: string;
  obj: string;
  displacement: number[] | null;
}

interface Snapshot {
  editId: string | null;
  ops: EditOp[];
}

export class EditSession {
  readonly baseId: string;
  ops: EditOp[] = [];
  editId: string | null = null;
  mesh: MeshState | null = null;
  heatmap = false;
  expression: number[];
  resolution: number;

  private undoStack: Snapshot[] = [];
  private redoStack: Snapshot[] = [];
  private meshCache = new Map<string, MeshState>();
  private tracker = new LatestJobTracker();

  constructor(
    private readonly api: EditingApi,
    baseId: string,
    expressionDims: number,
    resolution = 64,
  ) {
    this.baseId = baseId;
    this.expression = new Array(expressionDims).fill(0);
    this.resolution = resolution;
  }

  private snapshot(): Snapshot {
    return { editId: this.editId, ops: [...this.ops] };
  }

  private restore(s: Snapshot): void {
    this.editId = s.editId;
    this.ops = [...s.ops];
  }

  /** Append ops, derive the new edit id, refresh the mesh. */
  async applyOps(ops: EditOp[]): Promise<string> {
    this.undoStack.push(this.snapshot());
    this.redoStack = [];
    this.ops = [...this.ops, ...ops];
    this.editId = await this.api.createEdit(this.baseId, this.ops);
    await this.refreshMesh();
    return this.editId;
  }

  sampleRegion(region: number, scale: number, seed: number): Promise<string> {
    return this.applyOps([{ region, mode: 'sample', scale, seed }]);
  }

  resetRegion(region: number): Promise<string> {
    return this.applyOps([{ region, mode: 'reset' }]);
  }

  /** Swap workflow: exchange the selected regions with a source identity. */
  swapRegions(sourceId: string, regions: number[]): Promise<string> {
    return this.applyOps(regions.map((region): EditOp => (
      { region, mode: 'swap', source_id: sourceId }
    )));
  }

  /** Re-issue the full op list; the service must return the current id. */
  async replay(): Promise<string> {
    if (this.editId === null) {
      throw new Error('nothing to replay');
    }
    return this.api.createEdit(this.baseId, this.ops);
  }

  get canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  get canRedo(): boolean {
    return this.redoStack.length > 0;
  }

  async undo(): Promise<void> {
    const prev = this.undoStack.pop();
    if (!prev) return;
    this.redoStack.push(this.snapshot());
    this.restore(prev);
    await this.refreshMesh();
  }

  async redo(): Promise<void> {
    const next = this.redoStack.pop();
    if (!next) return;
    this.undoStack.push(this.snapshot());
    this.restore(next);
    await this.refreshMesh();
  }

  setExpression(values: number[]): Promise<void> {
    this.expression = [...values];
    this.meshCache.clear();           // expression changes invalidate meshes
    return this.refreshMesh();
  }

  private cacheKey(): string {
    return JSON.stringify([this.editId, this.expression, this.resolution]);
  }

  /** Fetch the mesh for the current state; newer calls cancel stale polls. */
  async refreshMesh(): Promise<MeshState> {
    const key = this.cacheKey();
    const cached = this.meshCache.get(key);
    if (cached) {
      this.mesh = cached;
      return cached;
    }
    const req: MeshRequest = this.editId === null
      ? { identity: this.baseId, expression: this.expression, resolution: this.resolution }
      : { edit: this.editId, expression: this.expression, resolution: this.resolution };
    const jobId = await this.api.requestMesh(req);
    const job = await this.tracker.track(pollJob(this.api, jobId));
    this.tracker.settle();
    const obj = await this.api.getMeshText(jobId);
    const displacement = job.result?.has_displacement
      ? await this.api.getDisplacement(jobId)
      : null;
    const state: MeshState = { jobId, obj, displacement };
    this.meshCache.set(key, state);
    this.mesh = state;
    return state;
  }
}
