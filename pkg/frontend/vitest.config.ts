import { defineConfig } from "vitest/config";

// Steering tests drive a spawned server end to end; give them room.
export default defineConfig({
  test: {
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
