/** Application bootstrap: wires the service client, session, and viewer.
 * The service URL is the single configuration knob (?service=... or the
 * current origin). */

import { ApiClient, ServiceError } from './api';
import { EditSession } from './session';
import { Viewer } from './viewer';
import { PRESETS, presetValues, sliderSpecs } from './expressions';
import type { LatentStats, RegionsResponse } from './types';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function banner(message: string): void {
  const box = el<HTMLDivElement>('banner');
  box.textContent = message;
  box.style.display = message ? 'block' : 'none';
  if (message) {
    setTimeout(() => { box.style.display = 'none'; }, 6000);
  }
}

async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const serviceUrl = params.get('service') ?? window.location.origin;
  const api = new ApiClient(serviceUrl);

  let regions: RegionsResponse;
  let stats: LatentStats;
  try {
    regions = await api.getRegions();
    stats = await api.getLatentStats();
  } catch (err) {
    banner(`service unreachable at ${serviceUrl}: ${err}`);
    return;
  }
  const identities = (await api.getIdentities()).identities;

  const viewer = new Viewer(el<HTMLCanvasElement>('view'), {
    onRegionClick: (region) => selectRegion(region),
  });

  let session = new EditSession(api, identities[0].id, stats.exp_mean.length);
  let selectedRegion: number | null = null;

  const baseSelect = el<HTMLSelectElement>('base-identity');
  const sourceSelect = el<HTMLSelectElement>('source-identity');
  for (const select of [baseSelect, sourceSelect]) {
    identities.forEach((entry) => {
      const opt = document.createElement('option');
      opt.value = entry.id;
      opt.textContent = entry.id;
      select.appendChild(opt);
    });
  }

  const regionLabel = el<HTMLSpanElement>('region-label');
  function selectRegion(region: number): void {
    selectedRegion = region;
    regionLabel.textContent = regions.names[region];
    viewer.showAnchors(regions.anchors, region);
  }

  function render(): void {
    if (session.mesh) {
      viewer.showMesh(session.mesh.obj, session.mesh.displacement, session.heatmap);
    }
    viewer.showAnchors(regions.anchors, selectedRegion);
    el<HTMLButtonElement>('undo').disabled = !session.canUndo;
    el<HTMLButtonElement>('redo').disabled = !session.canRedo;
    el<HTMLSpanElement>('edit-id').textContent = session.editId ?? '(base)';
  }

  async function guarded(action: () => Promise<unknown>): Promise<void> {
    try {
      await action();
    } catch (err) {
      if (err instanceof ServiceError) {
        banner(`${err.code}: ${err.message}`);
      } else {
        banner(String(err));
      }
    }
    render();
  }

  el<HTMLButtonElement>('sample').onclick = () => guarded(async () => {
    if (selectedRegion === null) throw new Error('pick a region first');
    const scale = Number(el<HTMLInputElement>('scale').value);
    const seed = Math.floor(Math.random() * 1e6);
    await session.sampleRegion(selectedRegion, scale, seed);
  });

  el<HTMLButtonElement>('swap').onclick = () => guarded(async () => {
    if (selectedRegion === null) throw new Error('pick a region first');
    await session.swapRegions(sourceSelect.value, [selectedRegion]);
  });

  el<HTMLButtonElement>('reset-region').onclick = () => guarded(async () => {
    if (selectedRegion === null) throw new Error('pick a region first');
    await session.resetRegion(selectedRegion);
  });

  el<HTMLButtonElement>('undo').onclick = () => guarded(() => session.undo());
  el<HTMLButtonElement>('redo').onclick = () => guarded(() => session.redo());

  el<HTMLInputElement>('heatmap').onchange = (e) => {
    session.heatmap = (e.target as HTMLInputElement).checked;
    render();
  };

  baseSelect.onchange = () => guarded(async () => {
    session = new EditSession(api, baseSelect.value, stats.exp_mean.length);
    await session.refreshMesh();
  });

  // expression sliders + presets
  const sliderBox = el<HTMLDivElement>('sliders');
  const specs = sliderSpecs(stats.exp_std);
  const sliders: HTMLInputElement[] = specs.map((spec) => {
    const input = document.createElement('input');
    input.type = 'range';
    input.min = String(spec.min);
    input.max = String(spec.max);
    input.step = String(spec.step);
    input.value = '0';
    input.onchange = () => guarded(() =>
      session.setExpression(sliders.map((s) => Number(s.value))));
    sliderBox.appendChild(input);
    return input;
  });

  const presetBox = el<HTMLDivElement>('presets');
  PRESETS.forEach((preset) => {
    const btn = document.createElement('button');
    btn.textContent = preset.name;
    btn.onclick = () => guarded(async () => {
      const values = presetValues(preset, stats.exp_std);
      sliders.forEach((s, i) => { s.value = String(values[i] ?? 0); });
      await session.setExpression(values);
    });
    presetBox.appendChild(btn);
  });

  await guarded(() => session.refreshMesh());
}

start();
