/**
 * DOM layer for the four-step studio. Rendering is a pure function of the
 * state object; every mutation flows through the state machine and the API
 * client, then triggers a re-render.
 */

import { CLASS_LABELS, DesignApi, type TextClass } from "./api.js";
import {
  applyDrag,
  applyResize,
  applySnap,
  boxToRow,
  EditController,
  rowToBox,
  type NormBox,
  type ResizeHandle,
} from "./canvas.js";
import { StudioState } from "./state.js";

const STEP_TITLES: Record<number, string> = {
  1: "Step 1 - Inputs",
  2: "Step 2 - Preview",
  3: "Step 3 - Pick a design",
  4: "Step 4 - Fine-tune",
};

export class Wizard {
  private root: HTMLElement;
  private controllers: Map<number, EditController> = new Map();

  constructor(
    root: HTMLElement,
    public readonly state: StudioState,
    private readonly api: DesignApi,
    private readonly doc: Document = document,
  ) {
    this.root = root;
  }

  render(): void {
    this.root.innerHTML = "";
    const title = this.el("h2", "step-title", STEP_TITLES[this.state.step]);
    this.root.appendChild(title);
    const body = this.el("div", "step-body");
    this.root.appendChild(body);
    switch (this.state.step) {
      case 1:
        this.renderInputs(body);
        break;
      case 2:
        this.renderPreview(body);
        break;
      case 3:
        this.renderGrid(body);
        break;
      case 4:
        this.renderCanvas(body);
        break;
    }
    this.renderNav();
  }

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    cls?: string,
    text?: string,
  ): HTMLElementTagNameMap[K] {
    const node = this.doc.createElement(tag);
    if (cls) node.className = cls;
    if (text !== undefined) node.textContent = text;
    return node;
  }

  private notice(message: string): void {
    const box = this.el("div", "notice", message);
    const retry = this.el("button", "retry", "Dismiss");
    retry.addEventListener("click", () => box.remove());
    box.appendChild(retry);
    this.root.appendChild(box);
  }

  // -- step 1: inputs ---------------------------------------------------------

  private renderInputs(body: HTMLElement): void {
    const fields: TextClass[] = ["header", "body", "disclaimer", "button"];
    for (const cls of fields) {
      const row = this.el("label", "field-row", CLASS_LABELS[cls]);
      const input = this.el("input") as HTMLInputElement;
      input.type = "text";
      input.value = this.state.fields[cls];
      input.dataset.field = cls;
      input.addEventListener("input", () => {
        this.state.fields[cls] = input.value;
      });
      row.appendChild(input);
      body.appendChild(row);
    }
    const radiusRow = this.el("label", "field-row", "Button border radius");
    const radius = this.el("input") as HTMLInputElement;
    radius.type = "number";
    radius.value = String(this.state.fields.buttonRadius);
    radius.addEventListener("input", () => {
      this.state.fields.buttonRadius = Number(radius.value || 0);
    });
    radiusRow.appendChild(radius);
    body.appendChild(radiusRow);

    const fileRow = this.el("label", "field-row", "Background image");
    const file = this.el("input") as HTMLInputElement;
    file.type = "file";
    file.accept = "image/*";
    file.addEventListener("change", () => {
      void this.handleUpload(file.files?.[0] ?? null);
    });
    fileRow.appendChild(file);
    body.appendChild(fileRow);

    if (this.state.background) {
      body.appendChild(
        this.el(
          "p",
          "meta",
          `Background ${this.state.background.width}x${this.state.background.height}`,
        ),
      );
    }
  }

  private async handleUpload(file: Blob | null): Promise<void> {
    if (!file) return;
    try {
      if (!this.state.sessionId) {
        this.state.sessionId = await this.api.createSession();
      }
      this.state.background = await this.api.uploadBackground(this.state.sessionId, file);
      if (typeof URL !== "undefined" && "createObjectURL" in URL) {
        this.state.backgroundObjectUrl = URL.createObjectURL(file);
      }
      this.render();
    } catch (err) {
      this.notice(`Upload failed: ${String(err)}. Please retry.`);
    }
  }

  // -- step 2: placeholder preview --------------------------------------------

  private renderPreview(body: HTMLElement): void {
    const pane = this.el("div", "preview-pane");
    if (this.state.backgroundObjectUrl) {
      const img = this.el("img", "preview-bg") as HTMLImageElement;
      img.src = this.state.backgroundObjectUrl;
      pane.appendChild(img);
    }
    const stack = this.el("div", "preview-stack");
    for (const item of this.state.previewStack()) {
      const chip = this.el("div", `chip chip-${item.class}`, item.string);
      stack.appendChild(chip);
    }
    pane.appendChild(stack);
    body.appendChild(pane);
    body.appendChild(
      this.el("p", "meta", "Positions here are placeholders; designs come next."),
    );
  }

  // -- step 3: candidate grid ---------------------------------------------------

  private renderGrid(body: HTMLElement): void {
    const grid = this.el("div", "candidate-grid");
    this.state.candidates.forEach((candidate, index) => {
      const cell = this.el("figure", "candidate");
      cell.dataset.index = String(index);
      if (candidate.preview_blob && this.state.sessionId) {
        const img = this.el("img", "candidate-img") as HTMLImageElement;
        img.src = this.api.previewUrl(this.state.sessionId, index);
        cell.appendChild(img);
      } else {
        cell.appendChild(this.el("div", "candidate-fallback", candidate.warning ?? "layout only"));
      }
      if (this.state.selected === index) cell.classList.add("selected");
      cell.addEventListener("click", () => {
        this.state.selectCandidate(index);
        void this.api
          .select(this.state.sessionId!, [index])
          .then(() => this.render())
          .catch((err) => this.notice(`Selection failed: ${String(err)}`));
      });
      grid.appendChild(cell);
    });
    body.appendChild(grid);
  }

  async loadCandidates(): Promise<void> {
    if (!this.state.sessionId) throw new Error("no session yet");
    const candidates = await this.api.requestCandidates(this.state.sessionId, 6);
    this.state.setCandidates(candidates);
  }

  // -- step 4: edit canvas -------------------------------------------------------

  private renderCanvas(body: HTMLElement): void {
    if (this.state.selected === null) {
      body.appendChild(this.el("p", "meta", "Go back and select a design first."));
      return;
    }
    const candidate = this.state.candidates[this.state.selected];
    const canvas = this.el("div", "edit-canvas");
    const viewW = 480;
    const viewH = 480;
    canvas.style.width = `${viewW}px`;
    canvas.style.height = `${viewH}px`;
    if (this.state.backgroundObjectUrl) {
      canvas.style.backgroundImage = `url(${this.state.backgroundObjectUrl})`;
    }

    candidate.element_ids.forEach((elementId) => {
      if (!this.controllers.has(elementId)) {
        this.controllers.set(
          elementId,
          new EditController(
            (id, row) => this.api.patchBox(this.state.sessionId!, this.state.selected!, id, row),
            rowToBox(this.state.lastValidBox(elementId)),
            elementId,
          ),
        );
      }
      const controller = this.controllers.get(elementId)!;
      const node = this.el("div", "edit-box");
      node.dataset.elementId = String(elementId);
      this.positionNode(node, controller.current, viewW, viewH);
      this.wireGestures(node, controller, candidate.element_ids, viewW, viewH);
      canvas.appendChild(node);
    });
    body.appendChild(canvas);

    const exportBtn = this.el("button", "export", "Save");
    exportBtn.addEventListener("click", () => {
      void this.api
        .exportDesign(this.state.sessionId!, this.state.selected!)
        .then((result) => {
          const out = this.el("pre", "export-result", JSON.stringify(result.record, null, 2));
          body.appendChild(out);
        })
        .catch((err) => this.notice(`Export failed: ${String(err)}`));
    });
    body.appendChild(exportBtn);
  }

  private positionNode(node: HTMLElement, box: NormBox, viewW: number, viewH: number): void {
    node.style.left = `${(box.cx - box.w / 2) * viewW}px`;
    node.style.top = `${(box.cy - box.h / 2) * viewH}px`;
    node.style.width = `${box.w * viewW}px`;
    node.style.height = `${box.h * viewH}px`;
  }

  private otherBoxes(elementIds: number[], excluding: number): NormBox[] {
    return elementIds
      .filter((id) => id !== excluding)
      .map((id) => this.controllers.get(id)?.current)
      .filter((b): b is NormBox => Boolean(b));
  }

  private wireGestures(
    node: HTMLElement,
    controller: EditController,
    elementIds: number[],
    viewW: number,
    viewH: number,
  ): void {
    let start: { x: number; y: number; box: NormBox; handle: ResizeHandle | null } | null = null;
    node.addEventListener("pointerdown", (ev) => {
      const target = ev.target as HTMLElement;
      start = {
        x: ev.clientX,
        y: ev.clientY,
        box: controller.current,
        handle: (target.dataset.handle as ResizeHandle | undefined) ?? null,
      };
      node.setPointerCapture(ev.pointerId);
    });
    node.addEventListener("pointermove", (ev) => {
      if (!start) return;
      const dx = ev.clientX - start.x;
      const dy = ev.clientY - start.y;
      let next = start.handle
        ? applyResize(start.box, start.handle, dx, dy, viewW, viewH)
        : applyDrag(start.box, dx, dy, viewW, viewH);
      next = applySnap(next, this.otherBoxes(elementIds, controller.elementId));
      controller.preview(next);
      this.positionNode(node, next, viewW, viewH);
    });
    node.addEventListener("pointerup", () => {
      if (!start) return;
      start = null;
      void controller.commit().then(({ box, reverted }) => {
        if (reverted) this.notice("Edit rejected by the server; box restored.");
        else if (this.state.canEdit) this.state.confirmBox(controller.elementId, boxToRow(box));
        this.positionNode(node, box, viewW, viewH);
      });
    });
    for (const handle of ["nw", "ne", "sw", "se"] as ResizeHandle[]) {
      const grip = this.el("span", `handle handle-${handle}`);
      grip.dataset.handle = handle;
      node.appendChild(grip);
    }
  }

  // -- navigation ---------------------------------------------------------------

  private renderNav(): void {
    const nav = this.el("div", "nav");
    if (this.state.step > 1) {
      const back = this.el("button", "back", "Back");
      back.addEventListener("click", () => {
        this.state.back();
        this.render();
      });
      nav.appendChild(back);
    }
    if (this.state.step < 4) {
      const next = this.el("button", "next", this.state.step === 3 ? "Save Selection" : "Next");
      next.addEventListener("click", () => {
        void this.advance();
      });
      nav.appendChild(next);
    }
    this.root.appendChild(nav);
  }

  async advance(): Promise<void> {
    try {
      if (this.state.step === 1) {
        if (!this.state.sessionId || !this.state.background) {
          this.notice("Upload a background image first.");
          return;
        }
        await this.api.putForeground(
          this.state.sessionId,
          this.state.foregroundElements(),
          this.state.fields.buttonRadius,
        );
        this.state.next();
      } else if (this.state.step === 2) {
        await this.loadCandidates();
        this.state.next();
      } else if (this.state.step === 3) {
        if (this.state.selected === null) {
          this.notice("Pick one of the designs first.");
          return;
        }
        this.state.next();
        this.controllers = new Map();
      }
      this.render();
    } catch (err) {
      this.notice(`Request failed: ${String(err)}. Please retry.`);
    }
  }
}
