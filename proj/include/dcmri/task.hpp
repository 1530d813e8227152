#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dcmri/phantom.hpp"
#include "dcmri/volume.hpp"

namespace dcmri {

enum class TaskKind { three_class, binary_lesion };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view s);

struct TaskFormulation {
  TaskKind kind = TaskKind::three_class;

  int num_classes() const { return kind == TaskKind::three_class ? 3 : 2; }
  /// (healthy, benign, malignant) or (healthy, lesion_present).
  std::vector<std::string> class_names() const;
  /// Label index in this formulation's class space.
  int target(ClassLabel label) const;
  bool operator==(const TaskFormulation&) const = default;
};

enum class BinaryLabel { healthy = 0, lesion_present = 1 };

/// healthy stays healthy; benign and malignant become lesion_present.
BinaryLabel relabel_for_binary(ClassLabel label);

/// One breast ROI prepared as network input, carrying its labels.
struct RoiSample {
  std::string case_id;
  std::string center_id;
  Side side = Side::left;
  ClassLabel side_label = ClassLabel::healthy;
  ClassLabel case_label = ClassLabel::healthy;
  Volume3D input;
};

}  // namespace dcmri
