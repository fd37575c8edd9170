#include "bbt/task.hpp"

#include "bbt/binary_io.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace bbt {

namespace {

struct Row {
  std::vector<std::uint16_t> ids;
  std::vector<std::uint8_t> mask;
  std::uint16_t mask_pos = 0;
};

Row draw_row(std::mt19937_64& rng, std::size_t seq_len, std::size_t vocab) {
  Row row;
  row.ids.assign(seq_len, 0);
  row.mask.assign(seq_len, 0);
  const std::size_t min_len = std::max<std::size_t>(1, seq_len / 2);
  std::uniform_int_distribution<std::size_t> len_dist(min_len, seq_len);
  std::uniform_int_distribution<std::uint32_t> id_dist(0, static_cast<std::uint32_t>(vocab - 1));
  const std::size_t len = len_dist(rng);
  for (std::size_t j = 0; j < len; ++j) {
    row.ids[j] = static_cast<std::uint16_t>(id_dist(rng));
    row.mask[j] = 1;
  }
  std::uniform_int_distribution<std::size_t> pos_dist(0, len - 1);
  row.mask_pos = static_cast<std::uint16_t>(pos_dist(rng));
  return row;
}

EvalBatch rows_to_batch(const std::vector<std::vector<Row>>& by_class, std::size_t seq_len) {
  EvalBatch b;
  b.seq_len = seq_len;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    for (const Row& r : by_class[c]) {
      b.input_ids.insert(b.input_ids.end(), r.ids.begin(), r.ids.end());
      b.attention_mask.insert(b.attention_mask.end(), r.mask.begin(), r.mask.end());
      b.mask_pos.push_back(r.mask_pos);
      b.labels.push_back(static_cast<std::uint8_t>(c));
      ++b.batch;
    }
  }
  return b;
}

void put_split(ByteWriter& w, const EvalBatch& b) {
  w.put(static_cast<std::uint32_t>(b.batch));
  w.put_array(std::span<const std::uint16_t>(b.input_ids));
  w.put_array(std::span<const std::uint8_t>(b.attention_mask));
  w.put_array(std::span<const std::uint8_t>(b.labels));
  w.put_array(std::span<const std::uint16_t>(b.mask_pos));
}

EvalBatch get_split(ByteReader& r, std::size_t seq_len) {
  EvalBatch b;
  b.seq_len = seq_len;
  b.batch = r.get<std::uint32_t>("split size");
  b.input_ids = r.get_array<std::uint16_t>(b.batch * seq_len, "input ids");
  b.attention_mask = r.get_array<std::uint8_t>(b.batch * seq_len, "attention mask");
  b.labels = r.get_array<std::uint8_t>(b.batch, "labels");
  b.mask_pos = r.get_array<std::uint16_t>(b.batch, "mask positions");
  b.validate();
  return b;
}

}  // namespace

bool PlantedTask::operator==(const PlantedTask& o) const {
  return shots == o.shots && classes == o.classes && seq_len == o.seq_len && vocab == o.vocab &&
         spec.full_dim == o.spec.full_dim && spec.sub_dim == o.spec.sub_dim && teacher_z == o.teacher_z &&
         train == o.train && dev == o.dev && test == o.test;
}

PlantedTask plant_task(const PlantOptions& opt, const SurrogateModel& model, const ProjectionSpec& spec,
                       const Projection& projection, const PromptBase& p0) {
  if (opt.shots == 0) throw std::invalid_argument("plant_task: shots must be >= 1");
  if (opt.classes < 2) throw std::invalid_argument("plant_task: classes must be >= 2");
  if (opt.classes != model.classes()) throw std::invalid_argument("plant_task: classes differ from the model's");
  if (opt.seq_len == 0 || opt.seq_len > 65535) throw std::invalid_argument("plant_task: bad sequence length");
  if (projection.sub_dim() != spec.sub_dim || projection.full_dim() != spec.full_dim) {
    throw std::invalid_argument("plant_task: projection does not match spec");
  }

  PlantedTask task;
  task.shots = opt.shots;
  task.classes = opt.classes;
  task.seq_len = opt.seq_len;
  task.vocab = model.vocab_size();
  task.spec = spec;

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> teacher_dist(-opt.teacher_bound, opt.teacher_bound);
  task.teacher_z.resize(spec.sub_dim);
  for (auto& v : task.teacher_z) v = static_cast<float>(teacher_dist(rng));
  const std::vector<float> teacher_prompt = project(projection, task.teacher_z, p0);

  const std::size_t quota_train = opt.shots;
  const std::size_t quota_dev = opt.shots;
  const std::size_t quota_test = opt.test_per_class;
  std::vector<std::vector<Row>> train(opt.classes), dev(opt.classes), test(opt.classes);
  std::size_t missing = opt.classes * (quota_train + quota_dev + quota_test);

  EvalBatch one;
  one.batch = 1;
  one.seq_len = opt.seq_len;
  for (std::size_t draw = 0; missing > 0; ++draw) {
    if (draw >= opt.max_draws) {
      throw std::runtime_error("plant_task: could not fill every class after " + std::to_string(opt.max_draws) +
                               " draws; the teacher is degenerate for this model seed");
    }
    Row row = draw_row(rng, opt.seq_len, task.vocab);
    one.input_ids = row.ids;
    one.attention_mask = row.mask;
    one.mask_pos = {row.mask_pos};
    const Logits logits = model.forward(teacher_prompt, one);
    std::vector<double> scores(logits.values.begin(), logits.values.end());
    const std::size_t label = argmax(scores);
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    if (sorted[0] - sorted[1] < opt.min_margin || sorted[0] - sorted[1] > opt.max_margin) continue;
    // Fill train, then dev, then test for this class.
    if (train[label].size() < quota_train) {
      train[label].push_back(std::move(row));
    } else if (dev[label].size() < quota_dev) {
      dev[label].push_back(std::move(row));
    } else if (test[label].size() < quota_test) {
      test[label].push_back(std::move(row));
    } else {
      continue;
    }
    --missing;
  }

  task.train = rows_to_batch(train, opt.seq_len);
  task.dev = rows_to_batch(dev, opt.seq_len);
  task.test = rows_to_batch(test, opt.seq_len);
  return task;
}

Bytes encode_task(const PlantedTask& t) {
  ByteWriter w;
  w.magic("BBTK");
  for (std::size_t v : {t.shots, t.classes, t.seq_len, t.vocab, t.spec.sub_dim, t.spec.full_dim}) {
    w.put(static_cast<std::uint32_t>(v));
  }
  if (t.teacher_z.size() != t.spec.sub_dim) throw std::invalid_argument("encode_task: teacher_z length != d");
  w.put_array(std::span<const float>(t.teacher_z));
  for (const EvalBatch* split : {&t.train, &t.dev, &t.test}) {
    if (split->seq_len != t.seq_len || split->labels.size() != split->batch) {
      throw std::invalid_argument("encode_task: split shape disagrees with the task header");
    }
    put_split(w, *split);
  }
  return std::move(w).take();
}

PlantedTask decode_task(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (!r.magic("BBTK")) throw std::runtime_error("not a task file (bad magic)");
  PlantedTask t;
  t.shots = r.get<std::uint32_t>("k");
  t.classes = r.get<std::uint32_t>("K");
  t.seq_len = r.get<std::uint32_t>("S");
  t.vocab = r.get<std::uint32_t>("V");
  t.spec.sub_dim = r.get<std::uint32_t>("d");
  t.spec.full_dim = r.get<std::uint32_t>("D");
  t.teacher_z = r.get_array<float>(t.spec.sub_dim, "teacher_z");
  t.train = get_split(r, t.seq_len);
  t.dev = get_split(r, t.seq_len);
  t.test = get_split(r, t.seq_len);
  if (r.remaining() != 0) throw std::runtime_error("task file has trailing bytes");
  return t;
}

void save_task(const PlantedTask& task, const std::string& path) { write_file(path, encode_task(task)); }

PlantedTask load_task(const std::string& path) { return decode_task(read_file(path)); }

}  // namespace bbt
