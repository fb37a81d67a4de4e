import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
    // the walkthrough drives a real service; fits take a while on one core
    testTimeout: 180_000,
    hookTimeout: 180_000,
  },
});
