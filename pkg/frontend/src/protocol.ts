/**
 * NDJSON wire protocol: the consumer writes one request per line to our
 * stdin, we write one response per line to stdout. Requests and responses
 * need not share an order; ids match them up. End of requests is signaled
 * by the input stream closing.
 */

export interface ScoreRequest {
  id: string;
  path: string;
}

export interface ScoreResponse {
  id: string;
  score: number;
}

export class ProtocolError extends Error {
  constructor(message: string, readonly line: string) {
    super(`${message}: ${JSON.stringify(line)}`);
    this.name = "ProtocolError";
  }
}

/** Strict request parsing; anything but {id: string, path: string} is fatal. */
export function parseRequest(line: string): ScoreRequest {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch {
    throw new ProtocolError("request line is not valid JSON", line);
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    throw new ProtocolError("request line is not a JSON object", line);
  }
  const { id, path } = obj as Record<string, unknown>;
  if (typeof id !== "string" || id.length === 0) {
    throw new ProtocolError("request is missing a string id", line);
  }
  if (typeof path !== "string" || path.length === 0) {
    throw new ProtocolError("request is missing a string path", line);
  }
  return { id, path };
}

export function serializeResponse(response: ScoreResponse): string {
  if (!Number.isFinite(response.score)) {
    throw new Error(`refusing to emit non-finite score for id ${response.id}`);
  }
  return JSON.stringify({ id: response.id, score: response.score });
}
