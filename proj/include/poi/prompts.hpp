#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poi/attributes.hpp"
#include "poi/corpus.hpp"

namespace poi {

/// Bumped whenever template wording changes; part of every feature cache key.
inline constexpr std::string_view kTemplateVersion = "poi-prompt-v1";

enum class PromptKind { VisitPattern, Address, Surrounding };

inline constexpr std::array<PromptKind, 3> kAllPromptKinds = {PromptKind::VisitPattern, PromptKind::Address,
                                                              PromptKind::Surrounding};

std::string_view to_string(PromptKind k);
/// "visit" | "address" | "surrounding"
PromptKind parse_prompt_kind(std::string_view s);

struct Prompt {
  PoiId poi_id = 0;
  PromptKind kind = PromptKind::VisitPattern;
  std::string text;
  std::string template_version;

  bool operator==(const Prompt&) const = default;
};

/// "Between 6 am and 9 am" and friends.
std::string_view describe_slot(DaySlot slot);

/// Role-play line, "POI Information:" block of "Header: value" lines
/// (basic attributes, then the kind-specific extras), then a question.
Prompt generate_prompt(const Poi& poi, const PoiAttributes& attrs, PromptKind kind);

/// JSONL {poi_id, kind, template_version, text}.
std::string prompts_to_jsonl(std::span<const Prompt> prompts);
void save_prompts(std::span<const Prompt> prompts, const std::filesystem::path& path);
std::vector<Prompt> load_prompts(const std::filesystem::path& path);

}  // namespace poi
