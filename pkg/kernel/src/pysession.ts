/**
 * A persistent Python child process that executes code blocks in one shared
 * namespace, notebook style: printed output is captured, and when the final
 * top-level statement is an expression its repr comes back as the value.
 *
 * The child speaks a private line-JSON channel on its own stdio (no request
 * ids; calls are strictly serial). It watches its parent pid and exits on
 * its own if this process dies, so runaway user code cannot outlive the
 * kernel even when only the kernel process gets killed.
 */

import { spawn, type ChildProcessByStdio } from "node:child_process";
import type { Readable, Writable } from "node:stream";
import { LineQueue, LineSplitter } from "./framing.js";

export interface ExecOutcome {
  status: "ok" | "exception";
  stdout: string;
  value: string | null;
  error: string | null;
}

export class BackendGone extends Error {}

const BOOTSTRAP = `
import ast, io, json, os, sys, threading, time
from contextlib import redirect_stdout

proto_in = os.fdopen(os.dup(0), "r", encoding="utf-8")
proto_out = os.fdopen(os.dup(1), "w", encoding="utf-8")
sys.stdin = open(os.devnull, "r", encoding="utf-8")
sys.stdout = sys.stderr  # stray writes become diagnostics, never frames


def _watch_parent(initial_ppid):
    while True:
        time.sleep(0.5)
        if os.getppid() != initial_ppid:
            os._exit(1)


threading.Thread(target=_watch_parent, args=(os.getppid(),), daemon=True).start()

namespace = {"__name__": "__main__"}


def run_block(code):
    stdout_buffer = io.StringIO()
    value = None
    error = None
    status = "ok"
    try:
        tree = ast.parse(code, mode="exec")
        trailing = None
        if tree.body and isinstance(tree.body[-1], ast.Expr):
            trailing = ast.Expression(tree.body[-1].value)
            del tree.body[-1]
        with redirect_stdout(stdout_buffer):
            exec(compile(tree, "<block>", "exec"), namespace)
            if trailing is not None:
                result = eval(compile(trailing, "<block>", "eval"), namespace)
                if result is not None:
                    value = repr(result)
    except BaseException as exc:
        status = "exception"
        error = "%s: %s" % (type(exc).__name__, exc)
        line_no = getattr(exc, "lineno", None)
        tb = exc.__traceback__
        while tb is not None:
            if tb.tb_frame.f_code.co_filename == "<block>":
                line_no = tb.tb_lineno
            tb = tb.tb_next
        if line_no is not None:
            error = "%s (line %s)" % (error, line_no)
    return {
        "status": status,
        "stdout": stdout_buffer.getvalue(),
        "value": value,
        "error": error,
    }


proto_out.write(json.dumps({"ready": True}) + "\\n")
proto_out.flush()
for raw_line in proto_in:
    raw_line = raw_line.strip()
    if not raw_line:
        continue
    try:
        request = json.loads(raw_line)
        reply = run_block(request.get("code", ""))
    except Exception as exc:
        reply = {
            "status": "exception",
            "stdout": "",
            "value": None,
            "error": "bad internal request: %s" % exc,
        }
    proto_out.write(json.dumps(reply) + "\\n")
    proto_out.flush()
`;

const START_TIMEOUT_MS = 4000;

export class PythonSession {
  private child: ChildProcessByStdio<Writable, Readable, null> | null = null;
  private replies = new LineQueue();
  private exited = false;

  constructor(private readonly pythonBin: string = process.env.LCE_KERNEL_PYTHON ?? "python3") {}

  async start(): Promise<void> {
    const child = spawn(this.pythonBin, ["-u", "-c", BOOTSTRAP], {
      stdio: ["pipe", "pipe", "inherit"],
    });
    this.child = child;
    const splitter = new LineSplitter((line) => this.replies.push(line));
    child.stdout.setEncoding("utf-8");
    child.stdout.on("data", (chunk: string) => splitter.push(chunk));
    child.stdout.on("end", () => this.replies.close());
    child.on("exit", () => {
      this.exited = true;
      this.replies.close();
    });
    child.on("error", () => {
      this.exited = true;
      this.replies.close();
    });
    const greeting = await this.replies.take(START_TIMEOUT_MS);
    if (greeting === null || !JSON.parse(greeting).ready) {
      this.kill();
      throw new BackendGone(`python backend (${this.pythonBin}) failed to start`);
    }
  }

  get alive(): boolean {
    return this.child !== null && !this.exited;
  }

  /** Run one block; the caller guarantees calls never overlap. */
  async run(code: string): Promise<ExecOutcome> {
    if (!this.alive || this.child === null) {
      throw new BackendGone("python backend is not running");
    }
    this.child.stdin.write(JSON.stringify({ code }) + "\n");
    // No read timeout here: the session layer above the kernel owns wall
    // clocks, and a kernel that answered late would desync the protocol.
    const line = await this.replies.take(2 ** 31 - 1);
    if (line === null) {
      throw new BackendGone("python backend died mid-request");
    }
    return JSON.parse(line) as ExecOutcome;
  }

  kill(): void {
    if (this.child !== null) {
      this.child.kill("SIGKILL");
    }
  }
}
