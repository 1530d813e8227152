#include "dcmri/task.hpp"

#include "dcmri/errors.hpp"

namespace dcmri {

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::three_class ? "three_class" : "binary_lesion";
}

TaskKind parse_task_kind(std::string_view s) {
  if (s == "three_class") return TaskKind::three_class;
  if (s == "binary_lesion") return TaskKind::binary_lesion;
  throw ConfigError("unknown task formulation '" + std::string(s) + "'");
}

std::vector<std::string> TaskFormulation::class_names() const {
  if (kind == TaskKind::three_class) return {"healthy", "benign", "malignant"};
  return {"healthy", "lesion_present"};
}

int TaskFormulation::target(ClassLabel label) const {
  if (kind == TaskKind::three_class) return static_cast<int>(label);
  return static_cast<int>(relabel_for_binary(label));
}

BinaryLabel relabel_for_binary(ClassLabel label) {
  return label == ClassLabel::healthy ? BinaryLabel::healthy : BinaryLabel::lesion_present;
}

}  // namespace dcmri
