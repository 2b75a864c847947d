#!/usr/bin/env node
/**
 * External perceptual scorer for the curate pipeline.
 *
 * Reads {"id","path"} JSON lines from stdin until the stream closes,
 * answers {"id","score"} lines on stdout (score in [0,1]), then flushes and
 * exits 0. Inference runs in batches (--batch). Responses within a batch are
 * emitted newest-first on purpose: the protocol leaves response ordering
 * unspecified, and consumers must match by id, never by position.
 *
 *   --echo <v>     answer every request with the fixed score v (test double)
 *   --batch <n>    batch size for inference (default 16)
 *   --device <d>   device hint forwarded to the model (default "cpu")
 *
 * A malformed request line or a duplicate request id is a protocol
 * violation and exits nonzero. An unreadable image is not: it is answered
 * with the model's floor score and a stderr warning, and the consumer
 * decides policy.
 */

import { once } from "node:events";
import { createInterface } from "node:readline";
import type { Readable, Writable } from "node:stream";

import { EchoModel, QualityModel, SharpnessModel } from "./model.js";
import { ProtocolError, ScoreRequest, parseRequest, serializeResponse } from "./protocol.js";

export interface AdapterOptions {
  model: QualityModel;
  batchSize: number;
  warn?: (message: string) => void;
}

async function writeLine(out: Writable, line: string): Promise<void> {
  if (!out.write(line + "\n")) {
    await once(out, "drain");
  }
}

/** Score a batch; on failure fall back per item so one bad image costs only
 * itself (floor score + warning). */
async function scoreBatchSafe(
  model: QualityModel,
  batch: ScoreRequest[],
  warn: (message: string) => void,
): Promise<number[]> {
  try {
    const scores = await model.scoreBatch(batch.map((r) => r.path));
    if (scores.length !== batch.length) {
      throw new Error(
        `model returned ${scores.length} scores for ${batch.length} inputs`,
      );
    }
    return scores;
  } catch {
    const scores: number[] = [];
    for (const req of batch) {
      try {
        const [score] = await model.scoreBatch([req.path]);
        scores.push(score);
      } catch (err) {
        warn(`scoring ${req.path} failed (${String(err)}); ` +
             `answering floor score ${model.floor} for id ${req.id}`);
        scores.push(model.floor);
      }
    }
    return scores;
  }
}

export async function serve(
  input: Readable,
  output: Writable,
  options: AdapterOptions,
): Promise<number> {
  const { model, batchSize } = options;
  const warn = options.warn ?? ((m) => process.stderr.write(m + "\n"));
  const seen = new Set<string>();
  let batch: ScoreRequest[] = [];

  const flush = async (): Promise<void> => {
    if (batch.length === 0) return;
    const pending = batch;
    batch = [];
    const scores = await scoreBatchSafe(model, pending, warn);
    for (let i = pending.length - 1; i >= 0; i--) {
      await writeLine(output, serializeResponse({
        id: pending[i].id,
        score: scores[i],
      }));
    }
  };

  const lines = createInterface({ input, crlfDelay: Infinity });
  try {
    for await (const raw of lines) {
      const line = raw.trim();
      if (line === "") continue;
      const request = parseRequest(line);
      if (seen.has(request.id)) {
        throw new ProtocolError(`duplicate request id ${request.id}`, line);
      }
      seen.add(request.id);
      batch.push(request);
      if (batch.length >= batchSize) {
        await flush();
      }
    }
    await flush();
    return 0;
  } catch (err) {
    if (err instanceof ProtocolError) {
      warn(err.message);
      return 1;
    }
    throw err;
  } finally {
    lines.close();
  }
}

export interface ParsedArgs {
  echo?: number;
  batch: number;
  device: string;
}

export function parseArgs(argv: string[]): ParsedArgs {
  const parsed: ParsedArgs = { batch: 16, device: "cpu" };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const value = argv[i + 1];
    switch (flag) {
      case "--echo":
        parsed.echo = Number(value);
        i++;
        break;
      case "--batch":
        parsed.batch = Number(value);
        i++;
        break;
      case "--device":
        parsed.device = value;
        i++;
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!Number.isInteger(parsed.batch) || parsed.batch < 1) {
    throw new Error(`--batch must be a positive integer, got ${parsed.batch}`);
  }
  return parsed;
}

export function buildModel(args: ParsedArgs): QualityModel {
  if (args.echo !== undefined) {
    return new EchoModel(args.echo);
  }
  return new SharpnessModel(args.device);
}

async function main(): Promise<number> {
  let args: ParsedArgs;
  try {
    args = parseArgs(process.argv.slice(2));
  } catch (err) {
    process.stderr.write(String(err) + "\n");
    return 2;
  }
  const model = buildModel(args);
  process.stderr.write(`scorer-adapter: model=${model.name} batch=${args.batch}\n`);
  return serve(process.stdin, process.stdout, {
    model,
    batchSize: args.batch,
  });
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;

if (invokedDirectly) {
  main().then(
    (code) => process.exit(code),
    (err) => {
      process.stderr.write(String(err) + "\n");
      process.exit(2);
    },
  );
}
