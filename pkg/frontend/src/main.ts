import { ApiClient } from "./api.js";
import { MapView } from "./map.js";
import { Panels } from "./panels.js";
import { Store } from "./store.js";
import type { TrailMetric } from "./types.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "http://127.0.0.1:8000";

const store = new Store();
const api = new ApiClient(baseUrl, {
  onSnapshot: (snap) => store.applySnapshot(snap),
  onEvent: (ev) => store.applyEvent(ev),
  onConnection: (conn) => store.setConnection(conn),
});

const canvas = document.getElementById("map") as HTMLCanvasElement;
const mapView = new MapView(canvas);
const panels = new Panels(document.getElementById("panels")!, store, api);

const metricSelect = document.getElementById("metric") as HTMLSelectElement;
metricSelect.onchange = () => store.setTrailMetric(metricSelect.value as TrailMetric);

let frameQueued = false;
store.onChange(() => {
  if (frameQueued) return;
  frameQueued = true;
  requestAnimationFrame(() => {
    frameQueued = false;
    const range: [number, number] =
      store.state.trailMetric === "rx_power" ? [-90, -50] : [0, 5];
    mapView.render(store.state.trail, store.state.txFix, range);
    panels.render();
  });
});

api.start();
