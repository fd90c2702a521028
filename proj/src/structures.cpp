#include "spinesim/structures.hpp"

#include <array>
#include <stdexcept>

namespace spinesim {
namespace {

constexpr std::array<std::string_view, 24> kLevelNames = {
    "C1", "C2",  "C3",  "C4", "C5", "C6", "C7", "T1",  "T2",  "T3",  "T4", "T5",
    "T6", "T7",  "T8",  "T9", "T10", "T11", "T12", "L1", "L2", "L3", "L4", "L5"};

std::string level_name(Label l) {
  if (l >= 1 && l <= 24) return std::string(kLevelNames[l - 1]);
  return {};
}

}  // namespace

StructureId disc_below(StructureId vertebra) {
  const Label l = label_of(vertebra);
  if (l < 1 || l > 24) throw std::invalid_argument("disc_below: not a C1-L5 level");
  return static_cast<StructureId>(100 + l);
}

bool is_canonical(Label l) { return structure_name(l).has_value(); }

StructureClass class_of(Label l) {
  if (is_vertebra(l)) return StructureClass::Vertebra;
  if (is_disc(l)) return StructureClass::Disc;
  switch (l) {
    case label_of(StructureId::SpinalCord): return StructureClass::SpinalCord;
    case label_of(StructureId::Csf): return StructureClass::Csf;
    case label_of(StructureId::NerveRoots): return StructureClass::NerveRoots;
    case label_of(StructureId::LigamentumFlavum): return StructureClass::LigamentumFlavum;
    default: return StructureClass::Other;
  }
}

std::optional<std::string> structure_name(Label l) {
  if (l >= 1 && l <= 24) return level_name(l);
  if (l == 26) return "sacrum";
  if (is_disc(l)) {
    const Label upper = l - 100;
    const std::string lower = upper == 24 ? "S1" : level_name(upper + 1);
    return "disc_" + level_name(upper) + "_" + lower;
  }
  switch (l) {
    case 200: return "spinal_cord";
    case 201: return "csf";
    case 202: return "nerve_roots";
    case 203: return "ligamentum_flavum";
    default: return std::nullopt;
  }
}

std::optional<Label> structure_from_name(std::string_view name) {
  for (Label l : canonical_labels()) {
    if (*structure_name(l) == name) return l;
  }
  return std::nullopt;
}

std::string display_name(Label l) {
  if (auto n = structure_name(l)) return *n;
  return "label_" + std::to_string(l);
}

const std::vector<Label>& canonical_labels() {
  static const std::vector<Label> labels = [] {
    std::vector<Label> out;
    for (Label l = 1; l <= 24; ++l) out.push_back(l);
    out.push_back(26);
    for (Label l = 101; l <= 124; ++l) out.push_back(l);
    for (Label l = 200; l <= 203; ++l) out.push_back(l);
    return out;
  }();
  return labels;
}

}  // namespace spinesim
