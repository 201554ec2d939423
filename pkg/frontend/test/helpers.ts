/**
 * Spawn a real API server (the packaged CLI) on a free port with a throwaway
 * store, and poll helpers for the scripted browser session.
 */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import net from "node:net";
import { tmpdir } from "node:os";
import path from "node:path";

export interface TestServer {
  baseUrl: string;
  storeRoot: string;
  stop(): Promise<void>;
}

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = net.createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const port = (probe.address() as net.AddressInfo).port;
      probe.close(() => resolve(port));
    });
  });
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function waitReady(baseUrl: string, child: ChildProcess, stderr: string[]): Promise<void> {
  const deadline = Date.now() + 20_000;
  while (Date.now() < deadline) {
    if (child.exitCode !== null) {
      throw new Error(`server exited early: ${stderr.join("")}`);
    }
    try {
      const response = await fetch(`${baseUrl}/runs`);
      if (response.ok) {
        return;
      }
    } catch {
      // not listening yet
    }
    await sleep(50);
  }
  throw new Error(`server never came up: ${stderr.join("")}`);
}

export async function startServer(): Promise<TestServer> {
  const storeRoot = mkdtempSync(path.join(tmpdir(), "steering-"));
  let lastError: unknown = null;
  for (let attempt = 0; attempt < 3; attempt++) {
    const port = await freePort();
    const baseUrl = `http://127.0.0.1:${port}`;
    const child = spawn(
      "dynex",
      ["serve", "--port", String(port), "--store", storeRoot, "--tick-delay", "0.005"],
      { stdio: ["ignore", "ignore", "pipe"] },
    );
    const stderr: string[] = [];
    child.stderr!.on("data", (chunk) => stderr.push(String(chunk)));
    try {
      await waitReady(baseUrl, child, stderr);
    } catch (err) {
      lastError = err;
      child.kill("SIGKILL");
      continue;
    }
    const stop = () =>
      new Promise<void>((resolve) => {
        child.once("exit", () => {
          rmSync(storeRoot, { recursive: true, force: true });
          resolve();
        });
        child.kill("SIGTERM");
        setTimeout(() => child.kill("SIGKILL"), 2_000).unref();
      });
    return { baseUrl, storeRoot, stop };
  }
  throw lastError;
}

/** Poll until `probe` returns a truthy value; the steering loop's clock. */
export async function until<T>(
  probe: () => Promise<T | null | undefined | false>,
  label: string,
  timeoutMs = 20_000,
): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const value = await probe();
    if (value) {
      return value;
    }
    await sleep(20);
  }
  throw new Error(`timed out waiting for ${label}`);
}
