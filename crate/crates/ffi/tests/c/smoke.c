/* SPDX-License-Identifier: Apache-2.0 */
/* Links against the shared library through the generated header. */

#include <math.h>
#include <stdio.h>
#include <string.h>

#include "omnilive.h"

#define CHECK(cond)                                                          \
    do {                                                                     \
        if (!(cond)) {                                                       \
            const char *e = ol_last_error_message();                         \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond,   \
                    e ? e : "no error");                                     \
            return 1;                                                        \
        }                                                                    \
    } while (0)

int main(void) {
    double v[4];
    CHECK(ol_hashed_vector((const uint8_t *)"umbrella", 8, v, 4) == OL_STATUS_OK);
    for (int i = 0; i < 4; i++) {
        uint64_t bits;
        memcpy(&bits, &v[i], sizeof bits);
        printf("%016llx\n", (unsigned long long)bits);
    }
    CHECK(ol_hashed_vector((const uint8_t *)"x", 1, v, 1) == OL_STATUS_INVALID_ARGUMENT);
    CHECK(ol_last_error_message() != NULL);

    OlBankConfig cfg = {2, 1, 4, 8};
    OlMemoryBank *bank = NULL;
    CHECK(ol_memory_bank_new(&cfg, &bank) == OL_STATUS_OK);
    double rows[8] = {1, 0, 0, 0, 1, 0, 0, 0};
    uint64_t ts[1] = {1000};
    CHECK(ol_memory_bank_ingest(bank, 0, 1000, ts, 1, rows, 2, 4) == OL_STATUS_OK);
    OlSnapshot *snap = NULL;
    CHECK(ol_memory_bank_snapshot(bank, 5000, &snap) == OL_STATUS_OK);
    CHECK(ol_snapshot_len(snap) == 1);
    char hash[65];
    CHECK(ol_snapshot_content_hash(snap, hash, sizeof hash) == OL_STATUS_OK);
    CHECK(strlen(hash) == 64);
    double q[4] = {1, 0, 0, 0};
    uint64_t clips[2];
    double scores[2];
    size_t n = 0;
    CHECK(ol_snapshot_retrieve(snap, q, 4, 2, 0.0, clips, scores, 2, &n) == OL_STATUS_OK);
    CHECK(n == 1 && clips[0] == 0 && fabs(scores[0] - 1.0) < 1e-12);
    ol_snapshot_free(snap);
    ol_memory_bank_free(bank);

    OlVad *vad = NULL;
    CHECK(ol_vad_new(NULL, &vad) == OL_STATUS_OK);
    int16_t pcm[4096] = {0};
    OlVadEvent ev[4];
    CHECK(ol_vad_push(vad, pcm, 4096, ev, 4, &n) == OL_STATUS_OK && n == 0);
    CHECK(ol_vad_flush(vad, ev, 4, &n) == OL_STATUS_OK && n == 0);
    ol_vad_free(vad);
    return 0;
}
