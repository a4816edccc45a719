import { HttpSessionApi } from "./api.js";
import { SessionController } from "./controller.js";
import { decideInDom, grabElements, playTaskInDom, render } from "./dom.js";
import { initialState, reduce } from "./reducer.js";
import type { ConsoleEvent } from "./reducer.js";
import type { ActionLabel } from "./types.js";

function start(): void {
  const els = grabElements(document);
  const form = document.getElementById("setup") as HTMLFormElement;
  const startButton = document.getElementById("start") as HTMLButtonElement;

  startButton.onclick = async () => {
    startButton.disabled = true;
    const base = (document.getElementById("server-url") as HTMLInputElement).value || "";
    const seedRaw = (document.getElementById("seed") as HTMLInputElement).value;
    const mode = (document.getElementById("mode") as HTMLSelectElement).value as
      "enforced" | "advisory";
    const api = new HttpSessionApi(base.replace(/\/$/, ""));

    let state = initialState();
    const dispatch = (ev: ConsoleEvent) => {
      state = reduce(state, ev);
      render(els, state);
    };

    const controller = new SessionController(
      api,
      {
        decide: (rec) =>
          decideInDom(els, rec, (state.snapshot?.action_set ?? ["N", "H"]) as ActionLabel[]),
        playTask: (descriptor, fidelity) => playTaskInDom(els, descriptor, fidelity, document),
        onWait: () => new Promise((r) => setTimeout(r, 400)),
      },
      dispatch,
      {
        seed: seedRaw ? Number(seedRaw) : undefined,
        mode,
      },
    );

    dispatch({ kind: "status", text: "connecting" });
    try {
      const final = await controller.run();
      const unsubscribe = controller.id
        ? api.subscribe(controller.id, (ev) => dispatch({ kind: "server_event", event: ev }))
        : null;
      dispatch({ kind: "snapshot", snapshot: final });
      dispatch({ kind: "status", text: `session complete, score ${final.score.toFixed(1)}` });
      if (unsubscribe) unsubscribe();
    } catch (err) {
      dispatch({ kind: "connection", status: "error" });
      dispatch({ kind: "status", text: String(err) });
      startButton.disabled = false;
    }
    form.style.display = "none";
  };
}

document.addEventListener("DOMContentLoaded", start);
