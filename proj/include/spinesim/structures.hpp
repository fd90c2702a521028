#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace spinesim {

using Label = std::uint16_t;

/// Canonical anatomical structure codes. Values are stable on disk.
/// Discs are encoded as 100 + the level of the vertebra above the disc.
enum class StructureId : Label {
  C1 = 1, C2, C3, C4, C5, C6, C7,
  T1, T2, T3, T4, T5, T6, T7, T8, T9, T10, T11, T12,
  L1, L2, L3, L4, L5,
  Sacrum = 26,
  SpinalCord = 200,
  Csf = 201,
  NerveRoots = 202,
  LigamentumFlavum = 203,
};

enum class StructureClass {
  SpinalCord,
  NerveRoots,
  Csf,
  LigamentumFlavum,
  Disc,
  Vertebra,  // includes the sacrum
  Other,     // labels outside the canonical table
};

constexpr Label label_of(StructureId id) { return static_cast<Label>(id); }

constexpr bool is_vertebra(Label l) { return (l >= 1 && l <= 24) || l == 26; }
constexpr bool is_disc(Label l) { return l >= 101 && l <= 124; }
constexpr bool is_neural(Label l) { return l >= 200 && l <= 202; }

/// Disc directly below a vertebral level (L4 -> disc L4/L5).
StructureId disc_below(StructureId vertebra);

bool is_canonical(Label l);
StructureClass class_of(Label l);

/// "L5", "sacrum", "disc_L4_L5", "spinal_cord", ... or nullopt.
std::optional<std::string> structure_name(Label l);
std::optional<Label> structure_from_name(std::string_view name);

/// Name for any label: canonical name, else "label_<n>".
std::string display_name(Label l);

/// Every canonical label in ascending order.
const std::vector<Label>& canonical_labels();

}  // namespace spinesim
