#include <stdio.h>
#include <string.h>
#include "robust_hh.h"

#define CHECK(expr, want)                                                        \
    do {                                                                         \
        RhhStatus st_ = (expr);                                                  \
        if (st_ != (want)) {                                                     \
            char msg_[256];                                                      \
            rhh_last_error(msg_, sizeof msg_);                                   \
            fprintf(stderr, "%s:%d: %s -> %s (%s)\n", __FILE__, __LINE__, #expr, \
                    rhh_status_name(st_), msg_);                                 \
            return 1;                                                            \
        }                                                                        \
    } while (0)

int main(void) {
    RhhSketch *s = NULL;
    CHECK(rhh_sketch_new(RHH_VARIANT_B_COUNT_SKETCH, 1u << 20, 400, 20, 9, true, &s), RHH_STATUS_OK);
    uint64_t keys[] = {10, 11, 12};
    double vals[] = {25, 1, -2};
    CHECK(rhh_sketch_update_batch(s, keys, vals, 3), RHH_STATUS_OK);
    CHECK(rhh_sketch_update(s, 12, 2), RHH_STATUS_OK);
    CHECK(rhh_sketch_update(s, 13, 0.5), RHH_STATUS_NON_INTEGRAL);

    uint64_t top[1];
    double est[1];
    size_t n = 0;
    CHECK(rhh_sketch_top_k(s, keys, 3, 1, top, est, 1, &n), RHH_STATUS_OK);
    if (n != 1 || top[0] != 10) {
        fprintf(stderr, "top-1 was %llu\n", (unsigned long long)top[0]);
        return 1;
    }

    size_t len = 0;
    CHECK(rhh_sketch_serialize(s, NULL, 0, &len), RHH_STATUS_OK);
    unsigned char buf[4096];
    if (len > sizeof buf) return 1;
    CHECK(rhh_sketch_serialize(s, buf, sizeof buf, &len), RHH_STATUS_OK);
    RhhSketch *t = NULL;
    CHECK(rhh_sketch_deserialize(buf, len, &t), RHH_STATUS_OK);
    double a = 0, b = 0;
    CHECK(rhh_sketch_estimate(s, 10, &a), RHH_STATUS_OK);
    CHECK(rhh_sketch_estimate(t, 10, &b), RHH_STATUS_OK);
    if (memcmp(&a, &b, sizeof a) != 0) return 1;

    rhh_sketch_free(s);
    rhh_sketch_free(t);
    printf("ok %.1f\n", a);
    return 0;
}
