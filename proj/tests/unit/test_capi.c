/* SPDX-License-Identifier: Apache-2.0 */
/* Copyright 2026 The tfsed Authors */

/* Compiled as C to keep the public header C-clean. */

#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "tfsed/tfsed.h"

static int failures = 0;

#define EXPECT(cond)                                                   \
  do {                                                                 \
    if (!(cond)) {                                                     \
      fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                      \
    }                                                                  \
  } while (0)

int main(void) {
  tfsed_config* cfg = NULL;
  char buf[64];
  size_t len = 0;
  char* text;
  tfsed_model* model = NULL;

  EXPECT(strcmp(tfsed_status_name(TFSED_OK), "ok") == 0);
  EXPECT(strcmp(tfsed_status_name(TFSED_ERR_IO), "io") == 0);
  EXPECT(strcmp(tfsed_status_name(TFSED_ERR_CONFIG), "config") == 0);
  EXPECT(strcmp(tfsed_status_name(TFSED_ERR_INTERNAL), "internal") == 0);
  EXPECT(strlen(tfsed_version()) > 0);

  EXPECT(tfsed_config_create(NULL) == TFSED_ERR_PARAMETER);
  EXPECT(strstr(tfsed_last_error(), "NULL") != NULL);
  EXPECT(tfsed_config_create(&cfg) == TFSED_OK);
  EXPECT(tfsed_last_error()[0] == '\0');

  EXPECT(tfsed_config_set(cfg, "seed", "17") == TFSED_OK);
  EXPECT(tfsed_config_get(cfg, "seed", buf, sizeof buf, &len) == TFSED_OK);
  EXPECT(strcmp(buf, "17") == 0 && len == 3);
  EXPECT(tfsed_config_set(cfg, "no.such.key", "1") == TFSED_ERR_CONFIG);
  EXPECT(strstr(tfsed_last_error(), "no.such.key") != NULL);
  EXPECT(tfsed_config_set(cfg, "train.batch_size", "many") == TFSED_ERR_CONFIG);
  EXPECT(tfsed_config_parse(cfg, "class = gunshot\n") == TFSED_OK);
  EXPECT(tfsed_config_parse(cfg, "class\n") == TFSED_ERR_CONFIG);
  EXPECT(tfsed_config_validate(cfg) == TFSED_OK);

  /* Size query, short buffer, then the real copy. */
  EXPECT(tfsed_config_serialize(cfg, NULL, 0, &len) == TFSED_ERR_PARAMETER);
  EXPECT(len > 100);
  EXPECT(tfsed_config_serialize(cfg, buf, sizeof buf, &len) == TFSED_ERR_PARAMETER);
  text = (char*)malloc(len);
  EXPECT(tfsed_config_serialize(cfg, text, len, &len) == TFSED_OK);
  EXPECT(strlen(text) + 1 == len);
  EXPECT(strstr(text, "class = gunshot\n") != NULL);
  free(text);

  EXPECT(tfsed_config_set(cfg, "model.dropout", "1.5") == TFSED_OK);
  EXPECT(tfsed_config_validate(cfg) == TFSED_ERR_CONFIG);
  EXPECT(tfsed_config_load(cfg, "/nonexistent/run.cfg") == TFSED_ERR_IO);

  EXPECT(tfsed_train(cfg, "sideways", "a", NULL, "b", NULL, NULL, NULL) == TFSED_ERR_CONFIG);
  EXPECT(tfsed_eval(cfg, "/nonexistent", NULL, NULL, "/tmp/x", NULL, NULL) == TFSED_ERR_CONFIG);
  EXPECT(tfsed_synth(NULL, "/tmp/x", NULL, NULL) == TFSED_ERR_PARAMETER);

  EXPECT(tfsed_model_load("/nonexistent.tfat", &model) == TFSED_ERR_IO);
  EXPECT(model == NULL);
  EXPECT(tfsed_model_segments(NULL, 10, &len) == TFSED_ERR_PARAMETER);
  EXPECT(tfsed_model_predict(NULL, NULL, 0, 0, NULL, 0) == TFSED_ERR_PARAMETER);

  tfsed_config_destroy(cfg);
  tfsed_config_destroy(NULL);
  tfsed_model_destroy(NULL);

  if (failures) fprintf(stderr, "%d failure(s)\n", failures);
  else printf("capi: all checks passed\n");
  return failures ? 1 : 0;
}
