import { Point, displayedToNative, withinImage } from "./coords.js";

export type Phase = "clicking" | "seeded" | "refined" | "done";

export interface ClickPair {
  a: Point; // native pixels on the left image
  b: Point; // native pixels on the right image
  ordinal: number;
}

export interface ServerSession {
  id: string;
  quadruplet_id: string;
  phase: Phase;
  residuals: number[];
  inlier_count: number;
  h1: number[] | null;
  h_gt: number[] | null;
}

export interface ClickResult {
  accepted: boolean;
  completedPair?: ClickPair;
  hint?: string;
}

export const MIN_CLICK_PAIRS = 4;
export const RECOMMENDED_CLICK_PAIRS = 8;

/**
 * Client-side mirror of the server session state machine. The phase is always
 * taken from the last server response, so the UI never issues a request the
 * server would reject as out of order.
 */
export class UiSessionState {
  phase: Phase = "clicking";
  pairs: ClickPair[] = [];
  pendingLeft: Point | null = null;
  residuals: number[] = [];
  inlierCount = 0;
  overlayOpacity = 0.5;
  sessionId: string | null = null;

  /**
   * Record a click on one side at displayed coordinates. Enforces the
   * alternating left-then-right discipline and maps through the zoom factor
   * to native pixels. Returns the completed pair once a right click lands.
   */
  recordClick(
    side: "left" | "right",
    displayed: Point,
    zoom: number,
    imageWidth: number,
    imageHeight: number,
  ): ClickResult {
    if (this.phase !== "clicking") {
      return { accepted: false, hint: `cannot add clicks in phase ${this.phase}` };
    }
    const native = displayedToNative(displayed, zoom);
    if (!withinImage(native, imageWidth, imageHeight)) {
      return { accepted: false, hint: "click outside the image" };
    }
    if (side === "left") {
      this.pendingLeft = native;
      return { accepted: true };
    }
    if (this.pendingLeft === null) {
      return { accepted: false, hint: "click the left image first" };
    }
    const pair: ClickPair = {
      a: this.pendingLeft,
      b: native,
      ordinal: this.pairs.length,
    };
    this.pairs.push(pair);
    this.pendingLeft = null;
    return { accepted: true, completedPair: pair };
  }

  canSeed(): boolean {
    return this.phase === "clicking" && this.pairs.length >= MIN_CLICK_PAIRS;
  }

  canRefine(): boolean {
    return this.phase === "seeded";
  }

  canShowOverlay(): boolean {
    return this.phase !== "clicking";
  }

  canDecide(): boolean {
    return this.phase === "refined";
  }

  /** Adopt the authoritative state from a server response. */
  applyServer(session: ServerSession): void {
    this.sessionId = session.id;
    this.phase = session.phase;
    this.residuals = session.residuals ?? [];
    this.inlierCount = session.inlier_count ?? 0;
  }

  /** Residuals for display, largest first. */
  residualsDescending(): number[] {
    return [...this.residuals].sort((a, b) => b - a);
  }
}
