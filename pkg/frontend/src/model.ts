/**
 * Quality-model backends.
 *
 * The adapter talks to anything implementing QualityModel. The default
 * backend is a deterministic sharpness-energy head over decoded pixels: a
 * stand-in with the exact interface a neural no-reference scorer (loaded
 * weights, batched inference, [0,1] outputs) plugs into. EchoModel is the
 * trivial test double.
 */

import { readFile } from "node:fs/promises";

import { decode as decodeJpeg } from "jpeg-js";
import { PNG } from "pngjs";

export interface QualityModel {
  readonly name: string;
  /** Score reported for unreadable inputs. */
  readonly floor: number;
  /** One finite score in [0, 1] per path, same order as the input. */
  scoreBatch(paths: string[]): Promise<number[]>;
}

export class EchoModel implements QualityModel {
  readonly name: string;
  readonly floor: number;

  constructor(private readonly value: number) {
    if (!Number.isFinite(value) || value < 0 || value > 1) {
      throw new Error(`echo value must be a finite number in [0, 1], got ${value}`);
    }
    this.name = `echo(${value})`;
    this.floor = value;
  }

  async scoreBatch(paths: string[]): Promise<number[]> {
    return paths.map(() => this.value);
  }
}

interface Gray {
  width: number;
  height: number;
  pixels: Float64Array; // luma, 0-255
}

const PNG_MAGIC = Buffer.from([0x89, 0x50, 0x4e, 0x47]);
const JPEG_MAGIC = Buffer.from([0xff, 0xd8]);

function decodeToGray(data: Buffer): Gray {
  let width: number;
  let height: number;
  let rgba: Uint8Array;
  if (data.subarray(0, 4).equals(PNG_MAGIC)) {
    const png = PNG.sync.read(data);
    ({ width, height } = png);
    rgba = png.data;
  } else if (data.subarray(0, 2).equals(JPEG_MAGIC)) {
    const jpg = decodeJpeg(data, { useTArray: true });
    ({ width, height } = jpg);
    rgba = jpg.data;
  } else {
    throw new Error("unsupported image format (PNG and JPEG only)");
  }
  const pixels = new Float64Array(width * height);
  for (let i = 0; i < pixels.length; i++) {
    const o = i * 4;
    pixels[i] = (299 * rgba[o] + 587 * rgba[o + 1] + 114 * rgba[o + 2]) / 1000;
  }
  return { width, height, pixels };
}

/** 3x3 sliding dot product with replicate borders. */
function convolve3x3(g: Gray, kernel: number[]): Float64Array {
  const { width: w, height: h, pixels } = g;
  const out = new Float64Array(w * h);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      let acc = 0;
      for (let dy = -1; dy <= 1; dy++) {
        for (let dx = -1; dx <= 1; dx++) {
          const yy = Math.min(Math.max(y + dy, 0), h - 1);
          const xx = Math.min(Math.max(x + dx, 0), w - 1);
          acc += kernel[(dy + 1) * 3 + (dx + 1)] * pixels[yy * w + xx];
        }
      }
      out[y * w + x] = acc;
    }
  }
  return out;
}

const LAPLACIAN = [0, 1, 0, 1, -4, 1, 0, 1, 0];
const SOBEL_X = [-1, 0, 1, -2, 0, 2, -1, 0, 1];
const SOBEL_Y = [-1, -2, -1, 0, 0, 0, 1, 2, 1];

function populationVariance(values: Float64Array): number {
  let sum = 0;
  let sumSq = 0;
  for (const v of values) {
    sum += v;
    sumSq += v * v;
  }
  const n = values.length;
  const mean = sum / n;
  return Math.max(sumSq / n - mean * mean, 0);
}

/**
 * Deterministic no-reference sharpness head.
 *
 * energy = log1p(Var(laplacian)) * mean(|sobel|)/255, squashed to [0, 1)
 * by x/(1+x). Constant images score 0; blurring a textured image lowers
 * the score. Floor for unreadable inputs is 0.
 */
export class SharpnessModel implements QualityModel {
  readonly name = "sharpness-head";
  readonly floor = 0;

  constructor(readonly device: string = "cpu") {}

  async scoreBatch(paths: string[]): Promise<number[]> {
    const scores: number[] = [];
    for (const path of paths) {
      const gray = decodeToGray(await readFile(path));
      scores.push(this.scoreGray(gray));
    }
    return scores;
  }

  private scoreGray(g: Gray): number {
    const lap = convolve3x3(g, LAPLACIAN);
    const gx = convolve3x3(g, SOBEL_X);
    const gy = convolve3x3(g, SOBEL_Y);
    let sobelSum = 0;
    for (let i = 0; i < gx.length; i++) {
      sobelSum += Math.sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
    }
    const energy =
      Math.log1p(populationVariance(lap)) * (sobelSum / gx.length / 255);
    return energy / (1 + energy);
  }
}
