import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";
import { makeSynthetic } from "../src/dataset.js";
import { buildModel } from "../src/model.js";
import { architectureSchema } from "../src/protocol.js";
import { defaultTrainSpec, scaleMilestones, trainAndScore } from "../src/train.js";

const sanityArch = architectureSchema.parse(JSON.parse(
  readFileSync(join(__dirname, "fixtures", "sanity_arch.json"), "utf-8")));
const tinyArch = architectureSchema.parse(JSON.parse(
  readFileSync(join(__dirname, "fixtures", "tiny_arch.json"), "utf-8")));


describe("learning-rate schedule", () => {
  it("keeps the reference milestones when the budget allows them", () => {
    const spec = defaultTrainSpec(600);
    expect(spec.milestones).toEqual([
      { epoch: 100, rate: 0.017 },
      { epoch: 300, rate: 0.001 },
      { epoch: 500, rate: 0.0001 },
    ]);
  });

  it("rescales proportionally for short budgets", () => {
    expect(scaleMilestones([
      { epoch: 100, rate: 0.017 },
      { epoch: 300, rate: 0.001 },
      { epoch: 500, rate: 0.0001 },
    ], 20)).toEqual([
      { epoch: 3, rate: 0.017 },
      { epoch: 10, rate: 0.001 },
      { epoch: 17, rate: 0.0001 },
    ]);
  });

  it("drops milestones that collide after rescaling", () => {
    const scaled = scaleMilestones([
      { epoch: 100, rate: 0.017 },
      { epoch: 300, rate: 0.001 },
      { epoch: 500, rate: 0.0001 },
    ], 2);
    expect(scaled.map((m) => m.epoch)).toEqual([1, 2]);
  });
});

describe("training", () => {
  it("single epoch: v_best equals that epoch's accuracy", () => {
    const data = makeSynthetic({ classes: 2, per_class: 10, image_size: 8, seed: 5 });
    const model = buildModel(tinyArch);
    const out = trainAndScore(model, data, defaultTrainSpec(1));
    expect(out.perEpoch.length).toBe(1);
    expect(out.vBest).toBe(out.perEpoch[0]);
  });

  it("untrained accuracy sits near chance on balanced classes", () => {
    const data = makeSynthetic({ classes: 3, per_class: 30, image_size: 32, seed: 6 });
    const model = buildModel(sanityArch);
    const images = data.val.images.map((img) => {
      const centered = new Float32Array(img.length);
      for (let i = 0; i < img.length; i++) centered[i] = img[i] * 2 - 1;
      return centered;
    });
    const accuracy = model.accuracy(images, data.val.labels);
    expect(accuracy).toBeGreaterThanOrEqual(0.0);
    expect(accuracy).toBeLessThanOrEqual(0.67); // far from trained quality
  });

  it("rejects image sizes that do not match the architecture", () => {
    const data = makeSynthetic({ classes: 3, per_class: 4, image_size: 16, seed: 6 });
    const model = buildModel(sanityArch);
    expect(() => trainAndScore(model, data, defaultTrainSpec(1))).toThrow(/16x16/);
  });

  it("[acceptance] reaches v_best >= 0.90 on the 3-class synthetic set within 20 epochs",
     { timeout: 240_000 }, () => {
    const data = makeSynthetic({ classes: 3, per_class: 100, image_size: 32, seed: 7 });
    expect(data.train.images.length + data.val.images.length).toBe(300);
    const model = buildModel(sanityArch);
    const spec = defaultTrainSpec(12); // within the 20-epoch budget
    const out = trainAndScore(model, data, spec);
    expect(out.vBest).toBe(Math.max(...out.perEpoch));
    expect(out.vBest).toBeGreaterThanOrEqual(0.9);
    console.log(`[acceptance] trainer sanity: v_best=${out.vBest.toFixed(3)} PASS`);
  });
});
