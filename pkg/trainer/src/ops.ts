/** Layer forward/backward passes over flat Float32Array feature maps.
 *
 * Maps are laid out channel-major: index = (c * height + y) * width + x.
 * Convolutions are stride 1 (3x3 padded by 1, 1x1 unpadded) so they
 * preserve spatial dims; pooling uses a fully-inside window, matching
 * height -> floor((height - window) / stride) + 1.
 */
import { Rng } from "./rng.js";

export interface Shape3 {
  c: number;
  h: number;
  w: number;
}

export interface ParamTensor {
  value: Float32Array;
  grad: Float32Array;
  velocity: Float32Array;
}

export function paramTensor(size: number): ParamTensor {
  return {
    value: new Float32Array(size),
    grad: new Float32Array(size),
    velocity: new Float32Array(size),
  };
}

export class Conv2d {
  weight: ParamTensor;
  bias: ParamTensor;
  readonly pad: number;

  constructor(
    readonly inC: number,
    readonly outC: number,
    readonly kernel: number,
    readonly relu: boolean,
    rng: Rng,
  ) {
    this.pad = kernel === 3 ? 1 : 0;
    this.weight = paramTensor(outC * inC * kernel * kernel);
    this.bias = paramTensor(outC);
    const std = Math.sqrt(2.0 / (inC * kernel * kernel));
    for (let i = 0; i < this.weight.value.length; i++) {
      this.weight.value[i] = rng.gauss() * std;
    }
  }

  outShape(s: Shape3): Shape3 {
    return { c: this.outC, h: s.h, w: s.w };
  }

  /** Copy into a zero-padded buffer so the hot loops run branch-free. */
  private padInput(input: Float32Array, s: Shape3): Float32Array {
    if (this.pad === 0) return input;
    const { h, w } = s;
    const ph = h + 2;
    const pw = w + 2;
    const padded = new Float32Array(this.inC * ph * pw);
    for (let ic = 0; ic < this.inC; ic++) {
      for (let y = 0; y < h; y++) {
        const src = (ic * h + y) * w;
        const dst = (ic * ph + y + 1) * pw + 1;
        padded.set(input.subarray(src, src + w), dst);
      }
    }
    return padded;
  }

  forward(input: Float32Array, s: Shape3): Float32Array {
    const { h, w } = s;
    const k = this.kernel;
    const pw = w + 2 * this.pad;
    const ph = h + 2 * this.pad;
    const padded = this.padInput(input, s);
    const weight = this.weight.value;
    const out = new Float32Array(this.outC * h * w);
    const area = h * w;
    for (let oc = 0; oc < this.outC; oc++) {
      out.fill(this.bias.value[oc], oc * area, (oc + 1) * area);
    }
    for (let oc = 0; oc < this.outC; oc++) {
      const dstBase = oc * area;
      for (let ic = 0; ic < this.inC; ic++) {
        const wBase = (oc * this.inC + ic) * k * k;
        for (let ky = 0; ky < k; ky++) {
          for (let kx = 0; kx < k; kx++) {
            const wv = weight[wBase + ky * k + kx];
            if (wv === 0) continue;
            const srcBase = ic * ph * pw + ky * pw + kx;
            for (let oy = 0; oy < h; oy++) {
              const src = srcBase + oy * pw;
              const dst = dstBase + oy * w;
              for (let ox = 0; ox < w; ox++) {
                out[dst + ox] += wv * padded[src + ox];
              }
            }
          }
        }
      }
    }
    if (this.relu) {
      for (let i = 0; i < out.length; i++) if (out[i] < 0) out[i] = 0;
    }
    return out;
  }

  backward(gradOut: Float32Array, output: Float32Array, input: Float32Array,
           s: Shape3): Float32Array {
    const { h, w } = s;
    const k = this.kernel;
    const pw = w + 2 * this.pad;
    const ph = h + 2 * this.pad;
    const area = h * w;
    const padded = this.padInput(input, s);
    const weight = this.weight.value;
    const wGrad = this.weight.grad;
    const bGrad = this.bias.grad;

    let masked = gradOut;
    if (this.relu) {
      masked = new Float32Array(gradOut.length);
      for (let i = 0; i < gradOut.length; i++) {
        masked[i] = output[i] > 0 ? gradOut[i] : 0;
      }
    }
    for (let oc = 0; oc < this.outC; oc++) {
      let acc = 0;
      const base = oc * area;
      for (let i = 0; i < area; i++) acc += masked[base + i];
      bGrad[oc] += acc;
    }

    const gradPadded = new Float32Array(this.inC * ph * pw);
    for (let oc = 0; oc < this.outC; oc++) {
      const dstBase = oc * area;
      for (let ic = 0; ic < this.inC; ic++) {
        const wBase = (oc * this.inC + ic) * k * k;
        for (let ky = 0; ky < k; ky++) {
          for (let kx = 0; kx < k; kx++) {
            const wIdx = wBase + ky * k + kx;
            const wv = weight[wIdx];
            const srcBase = ic * ph * pw + ky * pw + kx;
            let acc = 0;
            for (let oy = 0; oy < h; oy++) {
              const src = srcBase + oy * pw;
              const dst = dstBase + oy * w;
              for (let ox = 0; ox < w; ox++) {
                const g = masked[dst + ox];
                acc += g * padded[src + ox];
                gradPadded[src + ox] += wv * g;
              }
            }
            wGrad[wIdx] += acc;
          }
        }
      }
    }

    if (this.pad === 0) return gradPadded;
    const gradIn = new Float32Array(this.inC * h * w);
    for (let ic = 0; ic < this.inC; ic++) {
      for (let y = 0; y < h; y++) {
        const src = (ic * ph + y + 1) * pw + 1;
        const dst = (ic * h + y) * w;
        for (let x = 0; x < w; x++) gradIn[dst + x] = gradPadded[src + x];
      }
    }
    return gradIn;
  }

  params(): ParamTensor[] {
    return [this.weight, this.bias];
  }

  paramCount(): number {
    return this.weight.value.length + this.bias.value.length;
  }
}

export class Pool2d {
  private argmax: Int32Array | null = null;

  constructor(readonly kind: "max" | "mean", readonly window: number,
              readonly stride: number) {}

  outShape(s: Shape3): Shape3 {
    return {
      c: s.c,
      h: Math.floor((s.h - this.window) / this.stride) + 1,
      w: Math.floor((s.w - this.window) / this.stride) + 1,
    };
  }

  forward(input: Float32Array, s: Shape3): Float32Array {
    const o = this.outShape(s);
    const out = new Float32Array(o.c * o.h * o.w);
    if (this.kind === "max") this.argmax = new Int32Array(out.length);
    const win = this.window;
    for (let c = 0; c < s.c; c++) {
      for (let oy = 0; oy < o.h; oy++) {
        for (let ox = 0; ox < o.w; ox++) {
          const y0 = oy * this.stride;
          const x0 = ox * this.stride;
          const outIdx = (c * o.h + oy) * o.w + ox;
          if (this.kind === "max") {
            let best = -Infinity;
            let bestIdx = -1;
            for (let dy = 0; dy < win; dy++) {
              for (let dx = 0; dx < win; dx++) {
                const idx = (c * s.h + y0 + dy) * s.w + x0 + dx;
                if (input[idx] > best) {
                  best = input[idx];
                  bestIdx = idx;
                }
              }
            }
            out[outIdx] = best;
            this.argmax![outIdx] = bestIdx;
          } else {
            let sum = 0;
            for (let dy = 0; dy < win; dy++) {
              for (let dx = 0; dx < win; dx++) {
                sum += input[(c * s.h + y0 + dy) * s.w + x0 + dx];
              }
            }
            out[outIdx] = sum / (win * win);
          }
        }
      }
    }
    return out;
  }

  backward(gradOut: Float32Array, s: Shape3): Float32Array {
    const o = this.outShape(s);
    const gradIn = new Float32Array(s.c * s.h * s.w);
    const win = this.window;
    for (let c = 0; c < s.c; c++) {
      for (let oy = 0; oy < o.h; oy++) {
        for (let ox = 0; ox < o.w; ox++) {
          const outIdx = (c * o.h + oy) * o.w + ox;
          const g = gradOut[outIdx];
          if (this.kind === "max") {
            gradIn[this.argmax![outIdx]] += g;
          } else {
            const share = g / (win * win);
            const y0 = oy * this.stride;
            const x0 = ox * this.stride;
            for (let dy = 0; dy < win; dy++) {
              for (let dx = 0; dx < win; dx++) {
                gradIn[(c * s.h + y0 + dy) * s.w + x0 + dx] += share;
              }
            }
          }
        }
      }
    }
    return gradIn;
  }
}

/** Residual join: elementwise sum of two equal-shape maps, then relu. */
export class Add {
  forward(a: Float32Array, b: Float32Array): Float32Array {
    const out = new Float32Array(a.length);
    for (let i = 0; i < a.length; i++) {
      const v = a[i] + b[i];
      out[i] = v < 0 ? 0 : v;
    }
    return out;
  }

  backward(gradOut: Float32Array, output: Float32Array): Float32Array {
    const grad = new Float32Array(gradOut.length);
    for (let i = 0; i < gradOut.length; i++) {
      grad[i] = output[i] > 0 ? gradOut[i] : 0;
    }
    return grad;
  }
}

export class GlobalAvgPool {
  forward(input: Float32Array, s: Shape3): Float32Array {
    const out = new Float32Array(s.c);
    const area = s.h * s.w;
    for (let c = 0; c < s.c; c++) {
      let sum = 0;
      const base = c * area;
      for (let i = 0; i < area; i++) sum += input[base + i];
      out[c] = sum / area;
    }
    return out;
  }

  backward(gradOut: Float32Array, s: Shape3): Float32Array {
    const gradIn = new Float32Array(s.c * s.h * s.w);
    const area = s.h * s.w;
    for (let c = 0; c < s.c; c++) {
      const share = gradOut[c] / area;
      const base = c * area;
      for (let i = 0; i < area; i++) gradIn[base + i] = share;
    }
    return gradIn;
  }
}

export class Linear {
  weight: ParamTensor;
  bias: ParamTensor;

  constructor(readonly inF: number, readonly outF: number, rng: Rng) {
    this.weight = paramTensor(outF * inF);
    this.bias = paramTensor(outF);
    const limit = Math.sqrt(6.0 / (inF + outF));
    for (let i = 0; i < this.weight.value.length; i++) {
      this.weight.value[i] = rng.uniform(limit);
    }
  }

  forward(input: Float32Array): Float32Array {
    const out = new Float32Array(this.outF);
    for (let o = 0; o < this.outF; o++) {
      let acc = this.bias.value[o];
      const base = o * this.inF;
      for (let i = 0; i < this.inF; i++) acc += this.weight.value[base + i] * input[i];
      out[o] = acc;
    }
    return out;
  }

  backward(gradOut: Float32Array, input: Float32Array): Float32Array {
    const gradIn = new Float32Array(this.inF);
    for (let o = 0; o < this.outF; o++) {
      const g = gradOut[o];
      this.bias.grad[o] += g;
      const base = o * this.inF;
      for (let i = 0; i < this.inF; i++) {
        this.weight.grad[base + i] += g * input[i];
        gradIn[i] += g * this.weight.value[base + i];
      }
    }
    return gradIn;
  }

  params(): ParamTensor[] {
    return [this.weight, this.bias];
  }

  paramCount(): number {
    return this.weight.value.length + this.bias.value.length;
  }
}

/** Softmax cross-entropy; returns the loss and writes dLoss/dLogits. */
export function softmaxCrossEntropy(logits: Float32Array, label: number,
                                    gradOut: Float32Array): number {
  let max = -Infinity;
  for (const v of logits) if (v > max) max = v;
  let denom = 0;
  for (const v of logits) denom += Math.exp(v - max);
  const logDenom = Math.log(denom);
  for (let i = 0; i < logits.length; i++) {
    const p = Math.exp(logits[i] - max) / denom;
    gradOut[i] = p - (i === label ? 1 : 0);
  }
  return logDenom - (logits[label] - max);
}
