import { ApiClient, ApiError, QuadrupletInfo } from "./api.js";
import { nativeToDisplayed, Point } from "./coords.js";
import { UiSessionState } from "./state.js";

const api = new ApiClient("");
const state = new UiSessionState();

let quadruplets: QuadrupletInfo[] = [];
let current: QuadrupletInfo | null = null;
let zoom = 1;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setHint(text: string): void {
  el<HTMLSpanElement>("hint").textContent = text;
}

function updateControls(): void {
  el<HTMLButtonElement>("seed").disabled = !state.canSeed();
  el<HTMLButtonElement>("refine").disabled = !state.canRefine();
  el<HTMLButtonElement>("accept").disabled = !state.canDecide();
  el<HTMLButtonElement>("reject").disabled = !state.canDecide();
  el<HTMLInputElement>("opacity").disabled = !state.canShowOverlay();
  el<HTMLSpanElement>("phase").textContent = state.phase;
  el<HTMLSpanElement>("pairs").textContent = String(state.pairs.length);
  const done = quadruplets.filter((q) => q.status !== "draft").length;
  el<HTMLSpanElement>("progress").textContent = `${done}/${quadruplets.length}`;
  const residuals = state.residualsDescending();
  el<HTMLUListElement>("residuals").innerHTML = residuals
    .map((r) => `<li>${r.toFixed(2)} px</li>`)
    .join("");
}

function drawMarkers(): void {
  for (const side of ["left", "right"] as const) {
    const layer = el<HTMLDivElement>(`${side}-markers`);
    layer.innerHTML = "";
    const points: Point[] = state.pairs.map((p) => (side === "left" ? p.a : p.b));
    if (side === "left" && state.pendingLeft) points.push(state.pendingLeft);
    for (const p of points) {
      const d = nativeToDisplayed(p, zoom);
      const marker = document.createElement("div");
      marker.className = "marker";
      marker.style.left = `${d.x}px`;
      marker.style.top = `${d.y}px`;
      layer.appendChild(marker);
    }
  }
}

async function openQuadruplet(quad: QuadrupletInfo): Promise<void> {
  current = quad;
  Object.assign(state, new UiSessionState());
  const session = await api.createSession(quad.id);
  state.applyServer(session);
  el<HTMLImageElement>("left-img").src = api.imageUrl(quad.id, "a_rgb");
  el<HTMLImageElement>("right-img").src = api.imageUrl(quad.id, "b_rgb");
  el<HTMLImageElement>("overlay-img").src = "";
  setHint(`annotating ${quad.id}; click left image first`);
  drawMarkers();
  updateControls();
}

async function nextPending(): Promise<void> {
  quadruplets = await api.listQuadruplets();
  const pending = quadruplets.find((q) => q.status === "draft");
  if (pending) {
    await openQuadruplet(pending);
  } else {
    setHint("all quadruplets annotated");
    updateControls();
  }
}

function onImageClick(side: "left" | "right", event: MouseEvent): void {
  const img = el<HTMLImageElement>(`${side}-img`);
  const rect = img.getBoundingClientRect();
  const displayed = { x: event.clientX - rect.x, y: event.clientY - rect.y };
  const result = state.recordClick(
    side,
    displayed,
    zoom,
    img.naturalWidth,
    img.naturalHeight,
  );
  if (!result.accepted) {
    if (result.hint) setHint(result.hint);
    return;
  }
  if (result.completedPair && state.sessionId) {
    api
      .addClick(state.sessionId, result.completedPair.a, result.completedPair.b)
      .then((session) => {
        state.applyServer(session);
        updateControls();
      })
      .catch(showError);
  }
  drawMarkers();
  updateControls();
}

function showError(err: unknown): void {
  if (err instanceof ApiError) {
    setHint(`${err.code}: ${err.message}`);
  } else {
    setHint(String(err));
  }
}

async function serverAction(
  action: (sid: string) => Promise<import("./state.js").ServerSession>,
): Promise<void> {
  if (!state.sessionId) return;
  try {
    const session = await action(state.sessionId);
    state.applyServer(session);
    if (state.canShowOverlay()) {
      const img = el<HTMLImageElement>("overlay-img");
      img.src = `${api.overlayUrl(state.sessionId)}?t=${Date.now()}`;
      img.style.opacity = String(state.overlayOpacity);
    }
    updateControls();
    if (state.phase === "done") await nextPending();
  } catch (err) {
    showError(err);
  }
}

export function init(): void {
  el<HTMLImageElement>("left-img").addEventListener("click", (e) =>
    onImageClick("left", e),
  );
  el<HTMLImageElement>("right-img").addEventListener("click", (e) =>
    onImageClick("right", e),
  );
  el<HTMLButtonElement>("seed").addEventListener("click", () =>
    serverAction((sid) => api.seed(sid)),
  );
  el<HTMLButtonElement>("refine").addEventListener("click", () =>
    serverAction((sid) => api.refine(sid)),
  );
  el<HTMLButtonElement>("accept").addEventListener("click", () =>
    serverAction((sid) => api.accept(sid)),
  );
  el<HTMLButtonElement>("reject").addEventListener("click", () =>
    serverAction((sid) => api.reject(sid)),
  );
  el<HTMLSelectElement>("zoom").addEventListener("change", (e) => {
    zoom = Number((e.target as HTMLSelectElement).value);
    for (const id of ["left-img", "right-img"]) {
      const img = el<HTMLImageElement>(id);
      img.style.width = `${img.naturalWidth * zoom}px`;
    }
    drawMarkers();
  });
  el<HTMLInputElement>("opacity").addEventListener("input", (e) => {
    state.overlayOpacity = Number((e.target as HTMLInputElement).value);
    el<HTMLImageElement>("overlay-img").style.opacity = String(
      state.overlayOpacity,
    );
  });
  nextPending().catch(showError);
}

if (typeof document !== "undefined" && document.getElementById("left-img")) {
  init();
}
