// Copyright 2026 The Graphcap Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "graphcap/io.hpp"
#include "graphcap/random.hpp"

namespace graphcap {

// Synthetic captioning task: each clip is Gaussian background noise plus a
// few band-limited rectangular energy bursts. Event type fixes the mel band,
// onset and duration are random, and the reference caption names the events
// in onset order. The task exercises exactly what the encoder and graph
// module must learn: which events are present and in what order.
struct SyntheticSpec {
  std::size_t n_clips = 512;
  std::size_t n_event_types = 20;
  std::size_t mel_bins = 64;
  std::size_t frames = 192;
  std::size_t events_min = 1;
  std::size_t events_max = 4;
  double noise_std = 0.05;
  std::uint64_t seed = 42;
};

inline const std::vector<std::string>& event_word_list() {
  static const std::vector<std::string> kWords = {
      "alarm", "bark",      "bell",   "birds",  "car",     "chatter",
      "clap",  "click",     "cough",  "dog",    "door",    "drill",
      "drip",  "engine",    "footsteps", "glass", "horn",  "knock",
      "laughter", "music",  "rain",   "siren",  "thunder", "whistle"};
  return kWords;
}

inline std::string event_word(std::size_t type_index) {
  const auto& words = event_word_list();
  if (type_index < words.size()) return words[type_index];
  return "evt" + std::to_string(type_index);
}

inline void validate(const SyntheticSpec& spec) {
  if (spec.n_clips == 0) throw std::invalid_argument("synthetic: n_clips must be >= 1");
  if (spec.n_event_types == 0)
    throw std::invalid_argument("synthetic: n_event_types must be >= 1");
  if (spec.events_min < 1 || spec.events_min > spec.events_max)
    throw std::invalid_argument("synthetic: invalid events_per_clip range");
  if (spec.events_max > spec.n_event_types)
    throw std::invalid_argument(
        "synthetic: events_max exceeds n_event_types (events are distinct)");
  if (spec.mel_bins < spec.n_event_types)
    throw std::invalid_argument(
        "synthetic: need at least one mel bin per event type");
  if (spec.frames < 32)
    throw std::invalid_argument("synthetic: frames must be >= 32");
  if (spec.noise_std < 0)
    throw std::invalid_argument("synthetic: noise_std must be >= 0");
}

// Event type -> contiguous mel band [lo, hi).
inline std::pair<std::size_t, std::size_t> event_band(const SyntheticSpec& spec,
                                                      std::size_t type_index) {
  const std::size_t lo = type_index * spec.mel_bins / spec.n_event_types;
  const std::size_t hi = (type_index + 1) * spec.mel_bins / spec.n_event_types;
  return {lo, hi};
}

struct SyntheticEvent {
  std::size_t type_index;
  std::size_t onset;
  std::size_t duration;
};

inline Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  Dataset out;
  out.clips.reserve(spec.n_clips);

  // Durations up to a quarter clip keep events overlapping often enough to be
  // interesting, while onsets at least a sixth of the clip apart keep the
  // caption's order question answerable after the encoder's temporal pooling.
  const std::size_t dur_lo = std::max<std::size_t>(1, spec.frames / 8);
  const std::size_t dur_hi = std::max(dur_lo, spec.frames / 4);
  const std::size_t min_onset_gap = spec.frames / 6;

  const std::size_t id_width =
      std::max<std::size_t>(4, std::to_string(spec.n_clips - 1).size());

  // Types come off a shuffled deck, one full pass over the catalogue per
  // refill, so every event type ends up with a near-equal share of the
  // corpus; independent draws would leave some types 25% over- or
  // under-represented at this corpus size. Deck entries that would duplicate
  // a type already in the current clip are set aside for the next clip.
  std::vector<std::size_t> deck;
  auto draw_types = [&](std::size_t n) {
    std::vector<std::size_t> picked, set_aside;
    while (picked.size() < n) {
      if (deck.empty()) {
        deck.resize(spec.n_event_types);
        for (std::size_t i = 0; i < deck.size(); ++i) deck[i] = i;
        rng.shuffle(deck);
      }
      const std::size_t t = deck.back();
      deck.pop_back();
      if (std::find(picked.begin(), picked.end(), t) == picked.end())
        picked.push_back(t);
      else
        set_aside.push_back(t);
    }
    deck.insert(deck.end(), set_aside.begin(), set_aside.end());
    return picked;
  };

  for (std::size_t c = 0; c < spec.n_clips; ++c) {
    const std::size_t n_events =
        rng.range(spec.events_min, spec.events_max);
    const std::vector<std::size_t> types = draw_types(n_events);
    // Placement and noise run on a per-clip stream so that their draw counts
    // (onset retries vary by clip) can never shift which event types later
    // clips sample from the main stream.
    Rng clip_rng(spec.seed ^ (0x9E3779B97F4A7C15ull * (c + 1)));

    std::vector<SyntheticEvent> events;
    for (std::size_t type : types) {
      SyntheticEvent ev;
      ev.type_index = type;
      ev.duration = clip_rng.range(dur_lo, dur_hi);
      const std::size_t onset_max = spec.frames - ev.duration;
      // Spread onsets out so caption order is visibly encoded in time.
      const auto nearest_gap = [&events](std::size_t onset) {
        std::size_t gap = std::numeric_limits<std::size_t>::max();
        for (const auto& other : events)
          gap = std::min(gap, onset > other.onset ? onset - other.onset
                                                  : other.onset - onset);
        return gap;
      };
      ev.onset = clip_rng.range(0, onset_max);
      for (int attempt = 0; attempt < 100; ++attempt) {
        if (nearest_gap(ev.onset) >= min_onset_gap) break;
        ev.onset = clip_rng.range(0, onset_max);
      }
      if (nearest_gap(ev.onset) < min_onset_gap) {
        // Crowded clip: take the most isolated slot on a coarse grid instead
        // of accepting whatever the last draw happened to land on.
        std::size_t best = ev.onset, best_gap = nearest_gap(ev.onset);
        for (std::size_t cand = 0; cand <= onset_max; cand += 4)
          if (nearest_gap(cand) > best_gap) {
            best_gap = nearest_gap(cand);
            best = cand;
          }
        ev.onset = best;
      }
      events.push_back(ev);
    }
    std::sort(events.begin(), events.end(),
              [](const SyntheticEvent& a, const SyntheticEvent& b) {
                return a.onset != b.onset ? a.onset < b.onset
                                          : a.type_index < b.type_index;
              });

    Clip clip;
    std::string index_str = std::to_string(c);
    clip.id = "clip" + std::string(id_width > index_str.size()
                                       ? id_width - index_str.size()
                                       : 0,
                                   '0') +
              index_str;
    clip.mel = Array<float>(spec.mel_bins, spec.frames);
    if (spec.noise_std > 0)
      for (std::size_t i = 0; i < clip.mel.numel(); ++i)
        clip.mel[i] = static_cast<float>(spec.noise_std * clip_rng.normal());
    std::vector<std::string> words;
    for (const auto& ev : events) {
      const auto [band_lo, band_hi] = event_band(spec, ev.type_index);
      for (std::size_t f = band_lo; f < band_hi; ++f)
        for (std::size_t t = ev.onset; t < ev.onset + ev.duration; ++t)
          clip.mel.at2(f, t) += 1.0f;
      words.push_back(event_word(ev.type_index));
    }
    clip.references.push_back(std::move(words));
    out.clips.push_back(std::move(clip));
  }
  return out;
}

}  // namespace graphcap
