/** Deterministic synthetic image datasets plus on-disk loading.
 *
 * Synthetic classes are separable by construction: each class index maps
 * to a distinct geometric pattern (stripes, checkerboard, disk, diagonal,
 * cross) with mild Gaussian pixel noise on top. Generation is a pure
 * function of the spec's seed. On disk a dataset is
 * `<split>/<class_name>/<index>.pgm` with an 80/20 train/val split per
 * class.
 */
import * as fs from "node:fs";
import * as path from "node:path";
import { Rng } from "./rng.js";

export interface SyntheticSpec {
  classes: number;
  per_class: number;
  image_size: number;
  seed: number;
}

export interface Split {
  images: Float32Array[]; // grayscale, image_size^2 each
  labels: number[];
  classNames: string[];
  size: number;
}

export interface Dataset {
  train: Split;
  val: Split;
}

const NOISE_STD = 0.15;

function pattern(classIndex: number, x: number, y: number, size: number): number {
  const freq = 2 + Math.floor(classIndex / 6);
  const t = (2 * Math.PI * freq) / size;
  const cx = (size - 1) / 2;
  const cy = (size - 1) / 2;
  switch (classIndex % 6) {
    case 0:
      return 0.5 + 0.5 * Math.sin(t * y);
    case 1:
      return 0.5 + 0.5 * Math.sin(t * x);
    case 2:
      return 0.5 + 0.5 * Math.sin(t * x) * Math.sin(t * y);
    case 3: {
      const r = Math.hypot(x - cx, y - cy);
      return r < size / 3 ? 1 : 0;
    }
    case 4:
      return 0.5 + 0.5 * Math.sin((t * (x + y)) / 2);
    default:
      return Math.abs(x - cx) < size / 6 || Math.abs(y - cy) < size / 6 ? 1 : 0;
  }
}

function renderImage(classIndex: number, size: number, rng: Rng): Float32Array {
  const img = new Float32Array(size * size);
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const v = pattern(classIndex, x, y, size) + NOISE_STD * rng.gauss();
      img[y * size + x] = Math.min(1, Math.max(0, v));
    }
  }
  return img;
}

export function valCount(perClass: number): number {
  return Math.min(perClass, Math.max(1, Math.round(perClass * 0.2)));
}

export function makeSynthetic(spec: SyntheticSpec): Dataset {
  const rng = new Rng(spec.seed);
  const classNames = Array.from({ length: spec.classes }, (_, k) => `class_${k}`);
  const train: Split = { images: [], labels: [], classNames, size: spec.image_size };
  const val: Split = { images: [], labels: [], classNames, size: spec.image_size };
  for (let k = 0; k < spec.classes; k++) {
    const images = Array.from({ length: spec.per_class }, () =>
      renderImage(k, spec.image_size, rng));
    const nVal = valCount(spec.per_class);
    const nTrain = Math.max(spec.per_class - nVal, 1);
    for (let i = 0; i < nTrain; i++) {
      train.images.push(images[i]);
      train.labels.push(k);
    }
    for (let i = spec.per_class - nVal; i < spec.per_class; i++) {
      val.images.push(images[i]);
      val.labels.push(k);
    }
  }
  return { train, val };
}

// --- PGM (P5) serialization ----------------------------------------------

export function encodePgm(image: Float32Array, size: number): Buffer {
  const header = Buffer.from(`P5\n${size} ${size}\n255\n`, "ascii");
  const pixels = Buffer.alloc(size * size);
  for (let i = 0; i < image.length; i++) {
    pixels[i] = Math.min(255, Math.max(0, Math.round(image[i] * 255)));
  }
  return Buffer.concat([header, pixels]);
}

export function decodePgm(buffer: Buffer): { image: Float32Array; size: number } {
  const headerEnd = findHeaderEnd(buffer);
  const header = buffer.subarray(0, headerEnd).toString("ascii");
  const fields = header.split(/\s+/).filter((f) => f.length > 0);
  if (fields[0] !== "P5" || fields.length < 4) {
    throw new Error("not a binary PGM (P5) file");
  }
  const width = parseInt(fields[1], 10);
  const height = parseInt(fields[2], 10);
  const maxVal = parseInt(fields[3], 10);
  if (width !== height) throw new Error(`expected square image, got ${width}x${height}`);
  const pixels = buffer.subarray(headerEnd, headerEnd + width * height);
  if (pixels.length !== width * height) throw new Error("truncated PGM payload");
  const image = new Float32Array(width * height);
  for (let i = 0; i < image.length; i++) image[i] = pixels[i] / maxVal;
  return { image, size: width };
}

function findHeaderEnd(buffer: Buffer): number {
  // header is magic, width, height, maxval separated by whitespace; the
  // payload starts right after the single whitespace following maxval
  let fields = 0;
  let i = 0;
  while (i < buffer.length && fields < 4) {
    while (i < buffer.length && isSpace(buffer[i])) i++;
    while (i < buffer.length && !isSpace(buffer[i])) i++;
    fields++;
  }
  if (fields < 4 || i >= buffer.length) throw new Error("malformed PGM header");
  return i + 1;
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x0a || byte === 0x0d || byte === 0x09;
}

// --- directory layout -------------------------------------------------------

export function writeDataset(dataset: Dataset, outDir: string): void {
  for (const [splitName, split] of [["train", dataset.train], ["val", dataset.val]] as const) {
    const counters = new Map<number, number>();
    for (let i = 0; i < split.images.length; i++) {
      const label = split.labels[i];
      const index = counters.get(label) ?? 0;
      counters.set(label, index + 1);
      const dir = path.join(outDir, splitName, split.classNames[label]);
      fs.mkdirSync(dir, { recursive: true });
      const name = `${String(index).padStart(4, "0")}.pgm`;
      fs.writeFileSync(path.join(dir, name), encodePgm(split.images[i], split.size));
    }
  }
}

export function loadSplit(dir: string): Split {
  const classNames = fs.readdirSync(dir, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort();
  if (classNames.length === 0) throw new Error(`no class directories under ${dir}`);
  const split: Split = { images: [], labels: [], classNames, size: 0 };
  classNames.forEach((name, label) => {
    const classDir = path.join(dir, name);
    for (const file of fs.readdirSync(classDir).sort()) {
      const { image, size } = decodePgm(fs.readFileSync(path.join(classDir, file)));
      if (split.size === 0) split.size = size;
      if (size !== split.size) throw new Error(`mixed image sizes under ${dir}`);
      split.images.push(image);
      split.labels.push(label);
    }
  });
  return split;
}

/** Replicate a grayscale image across the requested channel count. */
export function tileChannels(image: Float32Array, channels: number): Float32Array {
  if (channels === 1) return image;
  const out = new Float32Array(channels * image.length);
  for (let c = 0; c < channels; c++) out.set(image, c * image.length);
  return out;
}
