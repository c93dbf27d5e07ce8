import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // the flow test boots a real server and waits out cadence ticks
    testTimeout: 30_000,
    hookTimeout: 30_000,
  },
});
