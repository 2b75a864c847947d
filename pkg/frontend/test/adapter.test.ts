import { spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { PNG } from "pngjs";
import { describe, expect, it } from "vitest";

const ADAPTER = join(dirname(fileURLToPath(import.meta.url)), "..", "dist", "adapter.js");

interface RunResult {
  code: number | null;
  responses: Array<{ id: string; score: number }>;
  stderr: string;
}

function runAdapter(args: string[], lines: string[]): Promise<RunResult> {
  return new Promise((resolve, reject) => {
    const proc = spawn("node", [ADAPTER, ...args], {
      stdio: ["pipe", "pipe", "pipe"],
    });
    let stdout = "";
    let stderr = "";
    proc.stdout.on("data", (d) => (stdout += d));
    proc.stderr.on("data", (d) => (stderr += d));
    proc.on("error", reject);
    proc.on("close", (code) => {
      const responses = stdout
        .split("\n")
        .filter((l) => l.trim() !== "")
        .map((l) => JSON.parse(l));
      resolve({ code, responses, stderr });
    });
    proc.stdin.write(lines.map((l) => l + "\n").join(""));
    proc.stdin.end();
  });
}

function request(id: string, path = "/nowhere.png"): string {
  return JSON.stringify({ id, path });
}

describe("adapter protocol", () => {
  it("answers zero requests with zero responses and exit 0", async () => {
    const result = await runAdapter(["--echo", "0.5"], []);
    expect(result.code).toBe(0);
    expect(result.responses).toEqual([]);
  });

  it("echo mode answers every id exactly once", async () => {
    const ids = Array.from({ length: 1000 }, (_, i) => `id${i.toString().padStart(4, "0")}`);
    const result = await runAdapter(["--echo", "0.25"], ids.map((i) => request(i)));
    expect(result.code).toBe(0);
    expect(result.responses).toHaveLength(1000);
    const answered = result.responses.map((r) => r.id).sort();
    expect(answered).toEqual([...ids].sort());
    expect(result.responses.every((r) => r.score === 0.25)).toBe(true);
  });

  it("emits responses out of request order (consumers must match by id)", async () => {
    const ids = Array.from({ length: 12 }, (_, i) => `r${i}`);
    const result = await runAdapter(["--echo", "0.5", "--batch", "4"],
                                    ids.map((i) => request(i)));
    expect(result.code).toBe(0);
    const order = result.responses.map((r) => r.id);
    expect(order).not.toEqual(ids);
    expect([...order].sort()).toEqual([...ids].sort());
  });

  it("rejects a duplicate request id with nonzero exit", async () => {
    const result = await runAdapter(["--echo", "0.5"],
                                    [request("same"), request("same")]);
    expect(result.code).not.toBe(0);
    expect(result.stderr).toContain("duplicate");
  });

  it("rejects a malformed request line with nonzero exit", async () => {
    const result = await runAdapter(["--echo", "0.5"],
                                    [request("ok"), "][ not json"]);
    expect(result.code).not.toBe(0);
  });

  it("rejects unknown flags", async () => {
    const result = await runAdapter(["--frobnicate"], []);
    expect(result.code).toBe(2);
  });

  it("validates --batch", async () => {
    const result = await runAdapter(["--echo", "0.5", "--batch", "0"], []);
    expect(result.code).toBe(2);
  });
});

describe("adapter with the sharpness model", () => {
  it("answers unreadable images with the floor score and a warning", async () => {
    const result = await runAdapter([], [request("ghost", "/no/such/file.png")]);
    expect(result.code).toBe(0);
    expect(result.responses).toEqual([{ id: "ghost", score: 0 }]);
    expect(result.stderr).toContain("floor");
  });

  it("scores a real image deterministically", async () => {
    const dir = mkdtempSync(join(tmpdir(), "scorer-adapter-"));
    const png = new PNG({ width: 32, height: 32 });
    let state = 99;
    for (let i = 0; i < 32 * 32; i++) {
      state = (state * 1664525 + 1013904223) >>> 0;
      const v = state % 256;
      png.data[i * 4] = png.data[i * 4 + 1] = png.data[i * 4 + 2] = v;
      png.data[i * 4 + 3] = 255;
    }
    const path = join(dir, "tex.png");
    writeFileSync(path, PNG.sync.write(png));

    const first = await runAdapter([], [request("tex", path)]);
    const second = await runAdapter([], [request("tex", path)]);
    expect(first.code).toBe(0);
    expect(first.responses[0].score).toBeGreaterThan(0);
    expect(first.responses[0].score).toBeLessThan(1);
    expect(first.responses).toEqual(second.responses);
  });

  it("keeps good images in a batch containing a bad one", async () => {
    const dir = mkdtempSync(join(tmpdir(), "scorer-adapter-"));
    const png = new PNG({ width: 8, height: 8 });
    png.data.fill(200);
    const good = join(dir, "good.png");
    writeFileSync(good, PNG.sync.write(png));

    const result = await runAdapter(["--batch", "8"], [
      request("good1", good),
      request("broken", "/missing.png"),
      request("good2", good),
    ]);
    expect(result.code).toBe(0);
    const byId = new Map(result.responses.map((r) => [r.id, r.score]));
    expect(byId.size).toBe(3);
    expect(byId.get("broken")).toBe(0);
  });
});
