/**
 * Kernel entry point: newline-delimited JSON frames on stdio.
 *
 * Handshake: `{"op": "ready"}` once the backend is up.
 * Request:   `{"id": <int>, "op": "exec", "code": <string>}`
 * Response:  `{"id": <int>, "status": "ok"|"exception", "stdout": <string>,
 *             "value": <string|null>, "error": <string|null>}`
 *
 * Requests are processed strictly in order, one response frame per request,
 * same id. Unknown ops answer with an exception frame; unreadable frames get
 * an exception frame with a null id and the loop continues. Diagnostics go
 * to stderr only. When stdin closes, the backend is torn down and the
 * process exits.
 */

import { LineQueue, LineSplitter } from "./framing.js";
import { BackendGone, PythonSession } from "./pysession.js";

interface ResponseFrame {
  id: number | null;
  status: "ok" | "exception";
  stdout: string;
  value: string | null;
  error: string | null;
}

function emit(frame: ResponseFrame): void {
  process.stdout.write(JSON.stringify(frame) + "\n");
}

function exceptionFrame(id: number | null, error: string): ResponseFrame {
  return { id, status: "exception", stdout: "", value: null, error };
}

async function handle(session: PythonSession, line: string): Promise<void> {
  let request: unknown;
  try {
    request = JSON.parse(line);
  } catch {
    emit(exceptionFrame(null, "unreadable frame"));
    return;
  }
  if (typeof request !== "object" || request === null) {
    emit(exceptionFrame(null, "unreadable frame"));
    return;
  }
  const { id = null, op, code } = request as { id?: number | null; op?: unknown; code?: unknown };
  if (op !== "exec") {
    emit(exceptionFrame(id, "unknown op"));
    return;
  }
  if (typeof code !== "string") {
    emit(exceptionFrame(id, "exec request is missing code"));
    return;
  }
  const outcome = await session.run(code);
  emit({ id, ...outcome });
}

async function main(): Promise<void> {
  const session = new PythonSession();
  try {
    await session.start();
  } catch (err) {
    console.error(`lce-kernel: ${err instanceof Error ? err.message : err}`);
    process.exit(1);
  }
  process.on("exit", () => session.kill());

  process.stdout.write(JSON.stringify({ op: "ready" }) + "\n");

  const requests = new LineQueue();
  const splitter = new LineSplitter((line) => requests.push(line));
  process.stdin.setEncoding("utf-8");
  process.stdin.on("data", (chunk: string) => splitter.push(chunk));
  process.stdin.on("end", () => requests.close());

  for (;;) {
    const line = await requests.take(2 ** 31 - 1);
    if (line === null) {
      break; // stdin closed; normal shutdown
    }
    try {
      await handle(session, line);
    } catch (err) {
      if (err instanceof BackendGone) {
        console.error(`lce-kernel: ${err.message}`);
        emit(exceptionFrame(null, "backend died"));
        process.exit(1);
      }
      throw err;
    }
  }
  session.kill();
  process.exit(0);
}

main().catch((err) => {
  console.error(`lce-kernel: fatal: ${err}`);
  process.exit(1);
});
