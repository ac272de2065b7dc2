/** Typed client for the editing service. All model math lives server-side;
 * this module only moves JSON and OBJ text. */

import type {
  EditOp, EditRequest, IdentitiesResponse, Job, LatentStats, MeshRequest,
  RegionsResponse,
} from './types';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(readonly status: number, readonly code: string, message: string) {
    super(message);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let code = 'error';
    let message = `HTTP ${resp.status}`;
    try {
      const body = await resp.json();
      code = body.code ?? code;
      message = body.message ?? message;
    } catch {
      /* non-JSON error body */
    }
    throw new ServiceError(resp.status, code, message);
  }
  return resp.json() as Promise<T>;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, '') + path;
  }

  getRegions(): Promise<RegionsResponse> {
    return this.fetchImpl(this.url('/api/regions')).then((r) => asJson<RegionsResponse>(r));
  }

  getIdentities(): Promise<IdentitiesResponse> {
    return this.fetchImpl(this.url('/api/identities')).then((r) => asJson<IdentitiesResponse>(r));
  }

  getLatentStats(): Promise<LatentStats> {
    return this.fetchImpl(this.url('/api/latent-stats')).then((r) => asJson<LatentStats>(r));
  }

  /** Create (or re-derive) the edit for a full op list; same body, same id. */
  createEdit(base: string, ops: EditOp[]): Promise<string> {
    const body: EditRequest = { base, ops };
    return this.fetchImpl(this.url('/api/edits'), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    }).then((r) => asJson<{ id: string }>(r)).then((b) => b.id);
  }

  requestMesh(req: MeshRequest): Promise<string> {
    return this.fetchImpl(this.url('/api/mesh'), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(req),
    }).then((r) => asJson<{ job: string }>(r)).then((b) => b.job);
  }

  getJob(jobId: string): Promise<Job> {
    return this.fetchImpl(this.url(`/api/jobs/${jobId}`)).then((r) => asJson<Job>(r));
  }

  async getMeshText(jobId: string): Promise<string> {
    const resp = await this.fetchImpl(this.url(`/api/meshes/${jobId}`));
    if (!resp.ok) {
      throw new ServiceError(resp.status, 'unknown_mesh', `HTTP ${resp.status}`);
    }
    return resp.text();
  }

  getDisplacement(jobId: string): Promise<number[]> {
    return this.fetchImpl(this.url(`/api/meshes/${jobId}/displacement`))
      .then((r) => asJson<number[]>(r));
  }
}
