export interface Point {
  x: number;
  y: number;
}

/** Map a point on the zoomed canvas back to native image pixels. */
export function displayedToNative(p: Point, zoom: number): Point {
  if (!(zoom > 0)) {
    throw new Error(`zoom must be positive, got ${zoom}`);
  }
  return { x: p.x / zoom, y: p.y / zoom };
}

/** Map a native-resolution point to the zoomed canvas. */
export function nativeToDisplayed(p: Point, zoom: number): Point {
  if (!(zoom > 0)) {
    throw new Error(`zoom must be positive, got ${zoom}`);
  }
  return { x: p.x * zoom, y: p.y * zoom };
}

/** True when the native point lies inside a width x height image. */
export function withinImage(p: Point, width: number, height: number): boolean {
  return p.x >= 0 && p.y >= 0 && p.x <= width - 1 && p.y <= height - 1;
}
