#include "poi/prompts.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "poi/util.hpp"

namespace poi {

using nlohmann::json;

namespace {

constexpr std::string_view kRolePlay =
    "You are an expert in urban geography who knows the streets, neighbourhoods and points of interest of this "
    "city in detail.";

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void line(std::string& out, std::string_view header, std::string_view value) {
  out += header;
  out += ": ";
  out += single_line(value);
  out += '\n';
}

std::string join_categories(const std::vector<std::string>& cats) {
  if (cats.empty()) return "none";
  std::string s = cats.front();
  for (std::size_t i = 1; i < cats.size(); ++i) {
    s += i + 1 == cats.size() ? " and " : ", ";
    s += cats[i];
  }
  return s;
}

}  // namespace

std::string_view to_string(PromptKind k) {
  switch (k) {
    case PromptKind::VisitPattern: return "visit";
    case PromptKind::Address: return "address";
    case PromptKind::Surrounding: return "surrounding";
  }
  return "visit";
}

PromptKind parse_prompt_kind(std::string_view s) {
  for (auto k : kAllPromptKinds) {
    if (to_string(k) == s) return k;
  }
  throw UserError("unknown prompt kind '" + std::string(s) + "'");
}

std::string_view describe_slot(DaySlot slot) {
  switch (slot) {
    case DaySlot::EarlyMorning: return "Between 6 am and 9 am";
    case DaySlot::Morning: return "Between 9 am and 11 am";
    case DaySlot::Noon: return "Between 11 am and 1 pm";
    case DaySlot::Afternoon: return "Between 1 pm and 5 pm";
    case DaySlot::Evening: return "Between 5 pm and 7 pm";
    case DaySlot::Night: return "Between 7 pm and 12 pm";
    case DaySlot::Midnight: return "Between 0 am and 6 am";
  }
  return "";
}

Prompt generate_prompt(const Poi& poi, const PoiAttributes& attrs, PromptKind kind) {
  std::string text;
  text += kRolePlay;
  text += '\n';
  text += "POI Information:\n";
  line(text, "Name", poi.name);
  line(text, "Latitude", coord(poi.lat));
  line(text, "Longitude", coord(poi.lon));
  line(text, "Category", poi.category);

  std::string_view question;
  switch (kind) {
    case PromptKind::VisitPattern: {
      std::string pattern(describe_slot(attrs.visit_pattern.daily));
      pattern += ", ";
      pattern += to_string(attrs.visit_pattern.weekly);
      line(text, "Visit Pattern", pattern);
      question = "Based on this information, what are the visiting habits of people who come to this place?";
      break;
    }
    case PromptKind::Address: {
      const auto& a = attrs.address;
      line(text, "Street", a.street.value_or("unknown"));
      line(text, "House Number", a.house_number.value_or("unknown"));
      line(text, "Postal Code", a.postal_code.value_or("unknown"));
      question = "Based on this information, where precisely is this place located?";
      break;
    }
    case PromptKind::Surrounding:
      line(text, "Surrounding", join_categories(attrs.surrounding.top_categories));
      question = "Based on this information, what is the surrounding environment of this place like?";
      break;
    default:
      throw UserError("unknown prompt kind");
  }
  text += "Question: ";
  text += question;
  return Prompt{poi.id, kind, std::move(text), std::string(kTemplateVersion)};
}

std::string prompts_to_jsonl(std::span<const Prompt> prompts) {
  std::string out;
  for (const auto& p : prompts) {
    json j{{"poi_id", p.poi_id}, {"kind", to_string(p.kind)}, {"template_version", p.template_version}, {"text", p.text}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_prompts(std::span<const Prompt> prompts, const std::filesystem::path& path) {
  atomic_write(path, prompts_to_jsonl(prompts));
}

std::vector<Prompt> load_prompts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read prompts file " + path.string());
  std::vector<Prompt> out;
  std::string line_text;
  std::size_t lineno = 0;
  while (std::getline(in, line_text)) {
    ++lineno;
    if (line_text.empty()) continue;
    try {
      auto j = json::parse(line_text);
      out.push_back(Prompt{j.at("poi_id").get<PoiId>(), parse_prompt_kind(j.at("kind").get<std::string>()),
                           j.at("text").get<std::string>(), j.at("template_version").get<std::string>()});
    } catch (const json::exception& e) {
      throw UserError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace poi
