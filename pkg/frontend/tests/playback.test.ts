import { describe, expect, it } from "vitest";

import { PlaybackController } from "../src/playback.js";
import type { PlanResult } from "../src/types.js";

function payload(n: number, warnings: number[] = []): PlanResult {
  return {
    frames: Array.from({ length: n }, (_, i) => [i / n, -i / n]),
    link_poses: Array.from({ length: n }, () => [
      { p: [0, 0, 0] as [number, number, number], q: [0, 0, 0, 1] as [number, number, number, number] },
    ]),
    metrics: {
      success: true, collision: false, path_length: 2.0, wall_time: 1.0,
      failure_reason: "none", min_clearance: 0.08, goal_pos_error: 0,
      goal_ori_error_deg: 0, max_step: 0.05,
      frame_clearances: Array.from({ length: n }, (_, i) => 0.1 - i * 0.001),
      margin_warning_frames: warnings,
    },
    q_goal: [1, -1],
  };
}

describe("PlaybackController", () => {
  it("exposes exactly the payload's frames", () => {
    const pb = new PlaybackController(payload(50));
    expect(pb.frameCount).toBe(50);
    const seen = new Set<string>();
    for (let i = 0; i < 50; i++) {
      pb.seek(i);
      seen.add(JSON.stringify(pb.configAt()));
    }
    expect(seen.size).toBe(50); // 50 distinct rendered frames
  });

  it("rejects mismatched payloads", () => {
    const broken = payload(5);
    broken.link_poses = broken.link_poses.slice(0, 3);
    expect(() => new PlaybackController(broken)).toThrow(/mismatch/);
  });

  it("seek clamps to the timeline", () => {
    const pb = new PlaybackController(payload(10));
    pb.seek(-3);
    expect(pb.frameIndex).toBe(0);
    pb.seek(99);
    expect(pb.frameIndex).toBe(9);
  });

  it("tick advances only while playing and loops", () => {
    const pb = new PlaybackController(payload(10), 5); // 5 fps
    pb.tick(1.0);
    expect(pb.frameIndex).toBe(0); // paused
    pb.play();
    pb.tick(1.0); // +5 frames
    expect(pb.frameIndex).toBe(5);
    pb.tick(1.0); // 10 > 9: loops
    expect(pb.frameIndex).toBeLessThan(10);
    pb.pause();
    const frozen = pb.frameIndex;
    pb.tick(1.0);
    expect(pb.frameIndex).toBe(frozen);
  });

  it("margin warnings map exactly to the backend's frames", () => {
    const pb = new PlaybackController(payload(20, [3, 7]));
    const flagged = [];
    for (let i = 0; i < 20; i++) if (pb.isWarningFrame(i)) flagged.push(i);
    expect(flagged).toEqual([3, 7]);
  });

  it("reads clearance from the payload only", () => {
    const pb = new PlaybackController(payload(10));
    pb.seek(4);
    expect(pb.clearanceAt()).toBeCloseTo(0.1 - 4 * 0.001, 12);
  });
});
