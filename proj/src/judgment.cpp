#include "colliderlab/judgment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace colliderlab {

namespace {

std::array<Condition, 8> make_all() {
  std::array<Condition, 8> out{};
  int i = 0;
  for (Content c : {Content::Rw17, Content::Abstract}) {
    for (Load l : {Load::Base, Load::Overloaded}) {
      for (Style s : {Style::Direct, Style::Cot}) out[i++] = Condition{c, l, s};
    }
  }
  return out;
}

}  // namespace

std::string Condition::experiment() const {
  std::string out = content == Content::Rw17 ? "rw17" : "abstract";
  out += load == Load::Base ? "-base" : "-over";
  return out;
}

std::string Condition::id() const {
  return experiment() + (style == Style::Direct ? "-direct" : "-cot");
}

std::optional<Condition> Condition::parse(std::string_view id) {
  for (const Condition &c : all()) {
    if (c.id() == id) return c;
  }
  return std::nullopt;
}

const std::array<Condition, 8> &Condition::all() {
  static const std::array<Condition, 8> conditions = make_all();
  return conditions;
}

JudgmentRecord JudgmentRecord::make(std::string agent_id, Condition condition,
                                    std::string domain, TaskId task, double raw) {
  if (!std::isfinite(raw)) throw std::invalid_argument("judgment value is not a finite number");
  JudgmentRecord r;
  r.agent_id = std::move(agent_id);
  r.condition = condition;
  r.domain = std::move(domain);
  r.task = task;
  r.raw_value = std::clamp(raw, 0.0, 100.0);
  r.clamped = r.raw_value != raw;
  r.normalized = r.raw_value / 100.0;
  return r;
}

std::vector<JudgmentRecord> select(const std::vector<JudgmentRecord> &records,
                                   std::string_view agent_id, const Condition &condition) {
  std::vector<JudgmentRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [&](const JudgmentRecord &r) {
                 return r.agent_id == agent_id && r.condition == condition;
               });
  return out;
}

}  // namespace colliderlab
