import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // the end-to-end file owns a live server; keep files sequential
    fileParallelism: false,
    environment: "node",
    testTimeout: 30000,
    hookTimeout: 240000,
  },
});
