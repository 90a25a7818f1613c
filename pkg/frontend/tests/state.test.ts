import { describe, expect, it } from 'vitest';

import {
  clampIndex,
  initialState,
  setSliceIndex,
  setTool,
  syncCrosshair,
} from '../src/state.js';

describe('session state', () => {
  it('starts at the middle slice of each axis', () => {
    const s = initialState('sess1', [10, 21, 32]);
    expect(s.sliceIndex).toEqual([5, 10, 16]);
    expect(s.activeTool).toBe('point');
    expect(s.activeClass).toBeNull();
  });

  it('clamps slice indices to the volume', () => {
    const s = initialState('sess1', [10, 10, 10]);
    expect(clampIndex(s, 0, -3)).toBe(0);
    expect(clampIndex(s, 0, 99)).toBe(9);
    expect(clampIndex(s, 0, 4.6)).toBe(5);
    setSliceIndex(s, 2, 100);
    expect(s.sliceIndex[2]).toBe(9);
  });

  it('moves the other two views to a clicked voxel', () => {
    const s = initialState('sess1', [32, 32, 32]);
    syncCrosshair(s, [3, 7, 11], 1);
    expect(s.sliceIndex[0]).toBe(3);
    expect(s.sliceIndex[2]).toBe(11);
    // the clicked view keeps its own index
    expect(s.sliceIndex[1]).toBe(16);
  });

  it('keeps exactly one tool active', () => {
    const s = initialState('sess1', [8, 8, 8]);
    setTool(s, 'brush');
    setTool(s, 'erase');
    expect(s.activeTool).toBe('erase');
  });
});
