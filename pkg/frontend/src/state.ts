/**
 * Studio state machine for the four-step flow:
 *   1 input page -> 2 live preview -> 3 candidate grid -> 4 edit canvas.
 *
 * Steps advance or retreat by exactly one; box edits are legal only on the
 * edit canvas. Every layout value held here came from a server response or a
 * user gesture that the server has validated.
 */

import type { BackgroundMeta, BoxRow, Candidate, ForegroundText, TextClass } from "./api.js";

export type Step = 1 | 2 | 3 | 4;

export interface FormFields {
  header: string;
  body: string;
  disclaimer: string;
  button: string;
  buttonRadius: number;
}

export const EMPTY_FIELDS: FormFields = {
  header: "",
  body: "",
  disclaimer: "",
  button: "",
  buttonRadius: 6,
};

const FIELD_ORDER: Array<keyof FormFields & TextClass> = [
  "header",
  "body",
  "disclaimer",
  "button",
];

export class StudioState {
  step: Step = 1;
  sessionId: string | null = null;
  fields: FormFields = { ...EMPTY_FIELDS };
  background: BackgroundMeta | null = null;
  backgroundObjectUrl: string | null = null;
  candidates: Candidate[] = [];
  selected: number | null = null;
  /** element id -> last server-accepted box for the selected candidate */
  confirmedBoxes: Map<number, BoxRow> = new Map();

  next(): void {
    if (this.step >= 4) throw new Error("already at the last step");
    this.step = (this.step + 1) as Step;
  }

  back(): void {
    if (this.step <= 1) throw new Error("already at the first step");
    this.step = (this.step - 1) as Step;
  }

  goTo(step: Step): void {
    if (Math.abs(step - this.step) !== 1) {
      throw new Error(`step transitions move by one; ${this.step} -> ${step} rejected`);
    }
    this.step = step;
  }

  get canEdit(): boolean {
    return this.step === 4 && this.selected !== null;
  }

  /** Foreground payload in input order; empty fields are skipped. */
  foregroundElements(): ForegroundText[] {
    const out: ForegroundText[] = [];
    for (const cls of FIELD_ORDER) {
      const value = this.fields[cls];
      if (typeof value === "string" && value.trim().length > 0) {
        out.push({ type: "text", class: cls, string: value });
      }
    }
    return out;
  }

  /** Placeholder stacking for the input-page preview: the real positions are
   * meaningless before generation, so elements stack vertically in input
   * order. */
  previewStack(): Array<{ class: TextClass; string: string }> {
    return this.foregroundElements().map((e) => ({ class: e.class, string: e.string }));
  }

  setCandidates(candidates: Candidate[]): void {
    // server order is display order; never reshuffle client-side
    this.candidates = candidates;
    this.selected = null;
    this.confirmedBoxes = new Map();
  }

  selectCandidate(index: number): void {
    if (this.step !== 3) throw new Error("selection happens on the grid step");
    if (index < 0 || index >= this.candidates.length) {
      throw new Error(`candidate ${index} out of range`);
    }
    this.selected = index;
    this.confirmedBoxes = new Map();
    const chosen = this.candidates[index];
    chosen.element_ids.forEach((id, i) => {
      this.confirmedBoxes.set(id, [...chosen.layout[i]] as BoxRow);
    });
  }

  /** Record a server-accepted edit. */
  confirmBox(elementId: number, box: BoxRow): void {
    if (!this.canEdit) throw new Error("edits are only allowed on the edit canvas");
    this.confirmedBoxes.set(elementId, [...box] as BoxRow);
  }

  lastValidBox(elementId: number): BoxRow {
    const box = this.confirmedBoxes.get(elementId);
    if (!box) throw new Error(`no confirmed box for element ${elementId}`);
    return [...box] as BoxRow;
  }
}
