/** Minimal OBJ text parser (v/f records, triangles). */

export interface ParsedMesh {
  positions: Float32Array;   // 3 * V
  indices: Uint32Array;      // 3 * F
  vertexCount: number;
  faceCount: number;
}

export function parseObj(text: string): ParsedMesh {
  const positions: number[] = [];
  const indices: number[] = [];
  for (const line of text.split('\n')) {
    if (line.startsWith('v ')) {
      const parts = line.slice(2).trim().split(/\s+/);
      positions.push(Number(parts[0]), Number(parts[1]), Number(parts[2]));
    } else if (line.startsWith('f ')) {
      const parts = line.slice(2).trim().split(/\s+/);
      for (let i = 0; i < 3; i += 1) {
        indices.push(Number(parts[i].split('/')[0]) - 1);   // OBJ is 1-based
      }
    }
  }
  return {
    positions: new Float32Array(positions),
    indices: new Uint32Array(indices),
    vertexCount: positions.length / 3,
    faceCount: indices.length / 3,
  };
}
