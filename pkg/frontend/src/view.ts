import { ResultCard } from "./types";

/** Caption shown under a result card: 1-based rank, category, score to 3dp. */
export function cardLabel(card: ResultCard, rankIdx: number): string {
  return `${rankIdx + 1}. ${card.category} — ${card.score.toFixed(3)}`;
}

/** Heading for the inspect panel. */
export function inspectHeading(card: ResultCard): string {
  return `${card.shape_id} (${card.category}) — ${card.score.toFixed(3)}`;
}
