#include "raunet/image.hpp"

#include "raunet/tensor.hpp"

namespace raunet {

MaskBatch MaskBatch::stack(const std::vector<const Mask*>& masks) {
    if (masks.empty()) throw ShapeError("MaskBatch::stack: empty input");
    MaskBatch batch;
    batch.n = masks.size();
    batch.height = masks[0]->height;
    batch.width = masks[0]->width;
    batch.ids.reserve(batch.n * batch.height * batch.width);
    for (const Mask* m : masks) {
        if (m->height != batch.height || m->width != batch.width) {
            throw ShapeError("MaskBatch::stack: masks differ in size");
        }
        batch.ids.insert(batch.ids.end(), m->ids.begin(), m->ids.end());
    }
    return batch;
}

}  // namespace raunet
