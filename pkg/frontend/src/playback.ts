/** Timeline playback over a completed trajectory payload.
 *
 * The controller only walks frame indices; poses and clearances come from the
 * payload, never from client-side math.  Frames whose clearance sits inside
 * the safety band are flagged so panels can highlight them.
 */

import type { PlanResult } from "./types.js";

export class PlaybackController {
  cursor = 0;           // fractional frame index in [0, frames-1]
  playing = false;
  fps: number;
  private warningSet: Set<number>;

  constructor(public result: PlanResult, fps = 12) {
    if (!result.frames.length || result.link_poses.length !== result.frames.length) {
      throw new Error("trajectory payload frame/pose count mismatch");
    }
    this.fps = fps;
    this.warningSet = new Set(result.metrics.margin_warning_frames);
  }

  get frameCount(): number {
    return this.result.frames.length;
  }

  get frameIndex(): number {
    return Math.min(this.frameCount - 1, Math.max(0, Math.round(this.cursor)));
  }

  seek(frame: number): void {
    this.cursor = Math.min(this.frameCount - 1, Math.max(0, frame));
  }

  play(): void {
    this.playing = true;
  }

  pause(): void {
    this.playing = false;
  }

  /** Advance by wall-clock seconds; loops at the end. */
  tick(dtSeconds: number): void {
    if (!this.playing) return;
    this.cursor += dtSeconds * this.fps;
    if (this.cursor > this.frameCount - 1) {
      this.cursor = this.cursor % (this.frameCount - 1);
    }
  }

  isWarningFrame(frame = this.frameIndex): boolean {
    return this.warningSet.has(frame);
  }

  clearanceAt(frame = this.frameIndex): number | null {
    return this.result.metrics.frame_clearances[frame] ?? null;
  }

  configAt(frame = this.frameIndex): number[] {
    return this.result.frames[frame];
  }

  posesAt(frame = this.frameIndex) {
    return this.result.link_poses[frame];
  }
}
