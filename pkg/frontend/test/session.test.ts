import { describe, expect, it } from 'vitest';

import { EditSession } from '../src/session';
import { MockApi } from './mockApi';

const DIMS = 4;

describe('EditSession', () => {
  it('starts from the base identity mesh with no heatmap sidecar', async () => {
    const api = new MockApi();
    const session = new EditSession(api, 'id0000', DIMS);
    await session.refreshMesh();
    expect(session.editId).toBeNull();
    expect(session.mesh?.obj).toContain('id0000');
    expect(session.mesh?.displacement).toBeNull();
    expect(api.calls.filter((c) => c.includes('displacement'))).toHaveLength(0);
  });

  it('replaying the op list reproduces the current edit id', async () => {
    const api = new MockApi();
    const session = new EditSession(api, 'id0000', DIMS);
    await session.sampleRegion(4, 1.0, 7);
    await session.swapRegions('id0001', [2, 3]);
    const shown = session.editId;
    expect(shown).not.toBeNull();
    expect(await session.replay()).toBe(shown);

    // a fresh session replaying the same recorded ops lands on the same id
    const replayApi = new MockApi();
    const fresh = new EditSession(replayApi, 'id0000', DIMS);
    await fresh.applyOps(session.ops);
    expect(fresh.editId).toBe(shown);
    expect(fresh.mesh?.obj).toBe(session.mesh?.obj);
  });

  it('sample workflow drives the documented endpoint sequence', async () => {
    const api = new MockApi();
    const session = new EditSession(api, 'id0000', DIMS);
    await session.sampleRegion(4, 0.5, 3);
    expect(api.calls).toEqual([
      'POST /api/edits',
      'POST /api/mesh',
      'GET /api/jobs/job-1',
      'GET /api/meshes/job-1',
      'GET /api/meshes/job-1/displacement',
    ]);
    expect(session.ops).toEqual([{ region: 4, mode: 'sample', scale: 0.5, seed: 3 }]);
  });

  it('swap workflow appends one op per region and refreshes the mesh', async () => {
    const api = new MockApi();
    const session = new EditSession(api, 'id0000', DIMS);
    await session.swapRegions('id0001', [5, 6]);
    expect(session.ops).toEqual([
      { region: 5, mode: 'swap', source_id: 'id0001' },
      { region: 6, mode: 'swap', source_id: 'id0001' },
    ]);
    expect(session.mesh?.displacement).toEqual([0.0, 0.5, 1.0]);
  });

  it('undo restores the previous mesh from the edit-id stack without refetch', async () => {
    const api = new MockApi();
    const session = new EditSession(api, 'id0000', DIMS);
    await session.refreshMesh();
    const baseMesh = session.mesh?.obj;
    await session.sampleRegion(1, 1.0, 1);
    const editedId = session.editId;
    const meshPosts = api.calls.filter((c) => c === 'POST /api/mesh').length;

    await session.undo();
    expect(session.editId).toBeNull();
    expect(session.mesh?.obj).toBe(baseMesh);
    // cached: no new mesh job was posted
    expect(api.calls.filter((c) => c === 'POST /api/mesh')).toHaveLength(meshPosts);

    await session.redo();
    expect(session.editId).toBe(editedId);
    expect(session.canRedo).toBe(false);
    expect(session.canUndo).toBe(true);
  });

  it('undo/redo is a pure stack over edit ids', async () => {
    const api = new MockApi();
    const session = new EditSession(api, 'id0000', DIMS);
    const ids: (string | null)[] = [null];
    await session.sampleRegion(0, 1, 1);
    ids.push(session.editId);
    await session.sampleRegion(1, 1, 2);
    ids.push(session.editId);
    await session.sampleRegion(2, 1, 3);
    ids.push(session.editId);

    await session.undo();
    expect(session.editId).toBe(ids[2]);
    await session.undo();
    expect(session.editId).toBe(ids[1]);
    await session.redo();
    expect(session.editId).toBe(ids[2]);
    // a new edit clears the redo branch
    await session.sampleRegion(3, 1, 4);
    expect(session.canRedo).toBe(false);
  });

  it('applying an op after undo rebases the op list', async () => {
    const api = new MockApi();
    const session = new EditSession(api, 'id0000', DIMS);
    await session.sampleRegion(0, 1, 1);
    await session.sampleRegion(1, 1, 2);
    await session.undo();
    await session.sampleRegion(2, 1, 9);
    expect(session.ops.map((o) => o.region)).toEqual([0, 2]);
    expect(await session.replay()).toBe(session.editId);
  });

  it('expression changes invalidate the mesh cache and hit the service', async () => {
    const api = new MockApi();
    const session = new EditSession(api, 'id0000', DIMS);
    await session.refreshMesh();
    await session.setExpression([0.5, 0, 0, 0]);
    const posts = api.calls.filter((c) => c === 'POST /api/mesh');
    expect(posts).toHaveLength(2);
    expect(session.mesh?.obj).toContain('[0.5,0,0,0]');
  });

  it('polls running jobs until they are done', async () => {
    const api = new MockApi();
    api.jobPollsUntilDone = 3;
    const session = new EditSession(api, 'id0000', DIMS);
    await session.refreshMesh();
    const polls = api.calls.filter((c) => c.startsWith('GET /api/jobs/'));
    expect(polls.length).toBe(4);
  });
});
