// Browser entry point: loads config.json, opens a session and wires the
// three slice canvases plus the 3D view to the controller.

import { ApiClient } from './api.js';
import { defaultOrbit } from './camera.js';
import { AnnotationController } from './controller.js';
import { initialState, setTool } from './state.js';
import type { Tool, Vec3 } from './types.js';

interface AppConfig {
  serverUrl: string;
  volumeId: string;
}

const AXIS_NAMES = ['x', 'y', 'z'];
const ZOOM = 2;

function showBlob(img: HTMLImageElement, blob: Blob): void {
  const url = URL.createObjectURL(blob);
  const old = img.src;
  img.onload = () => {
    if (old.startsWith('blob:')) URL.revokeObjectURL(old);
  };
  img.src = url;
}

async function boot(): Promise<void> {
  const config = (await (await fetch('./config.json')).json()) as AppConfig;
  const api = new ApiClient({ baseUrl: config.serverUrl });
  const snapshot = await api.createSession(config.volumeId);
  const state = initialState(snapshot.id, snapshot.dims as Vec3);
  for (const cls of snapshot.classes) state.classes.set(cls.id, cls);

  const sliceImgs = AXIS_NAMES.map(
    (n) => document.getElementById(`slice-${n}`) as HTMLImageElement);
  const renderImg = document.getElementById('render') as HTMLImageElement;
  const statusEl = document.getElementById('status') as HTMLElement;

  const controller = new AnnotationController(
    api, state, defaultOrbit(state.dims), {
      showSlice: (axis, blob) => showBlob(sliceImgs[axis], blob),
      showRender: (blob) => showBlob(renderImg, blob),
      showStatus: (text) => { statusEl.textContent = text; },
    });

  // tool and class selectors
  const toolSelect = document.getElementById('tool') as HTMLSelectElement;
  toolSelect.onchange = () => setTool(state, toolSelect.value as Tool);

  const classInput = document.getElementById('class-id') as HTMLInputElement;
  classInput.onchange = async () => {
    const id = Number(classInput.value);
    if (!state.classes.has(id)) {
      const cls = await api.upsertClass(state.sessionId, { id });
      state.classes.set(id, cls);
    }
    state.activeClass = id;
  };

  // per-class sliders
  const bindSlider = (elId: string, field: 'iso_value' | 'proximity' | 'opacity') => {
    const el = document.getElementById(elId) as HTMLInputElement;
    el.oninput = () => {
      if (state.activeClass !== null) {
        void controller.handleParamChange(state.activeClass, field, Number(el.value));
      }
    };
  };
  bindSlider('iso-value', 'iso_value');
  bindSlider('proximity', 'proximity');
  bindSlider('opacity', 'opacity');

  const refineBtn = document.getElementById('refine') as HTMLButtonElement;
  refineBtn.onclick = () => {
    if (state.activeClass !== null) void controller.requestRefine(state.activeClass);
  };

  // slice interaction: click annotates, drag with the brush paints
  sliceImgs.forEach((img, axis) => {
    let stroke: Array<[number, number]> | null = null;
    img.onpointerdown = (ev) => {
      if (state.activeTool === 'brush') {
        stroke = [[ev.offsetX, ev.offsetY]];
      } else {
        void controller.handleSliceClick(axis, ev.offsetX, ev.offsetY, ZOOM);
      }
    };
    img.onpointermove = (ev) => {
      if (stroke) stroke.push([ev.offsetX, ev.offsetY]);
    };
    img.onpointerup = () => {
      if (stroke) {
        void controller.handleSliceDrag(axis, stroke, ZOOM);
        stroke = null;
      }
    };
    img.onwheel = (ev) => {
      ev.preventDefault();
      void controller.setSlice(axis, state.sliceIndex[axis] + Math.sign(ev.deltaY));
    };
  });

  // 3D view: drag orbits the camera
  let orbiting = false;
  renderImg.onpointerdown = () => { orbiting = true; };
  renderImg.onpointerup = () => { orbiting = false; };
  renderImg.onpointermove = (ev) => {
    if (orbiting) controller.handleOrbitDrag(ev.movementX * 0.01, -ev.movementY * 0.01);
  };

  controller.connectEvents();
  await controller.refreshAllSlices();
  controller.requestRender();
}

void boot();
