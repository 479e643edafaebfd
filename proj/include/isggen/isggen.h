/* C interface to the incremental scene-graph image generator. */
#ifndef ISGGEN_ISGGEN_H
#define ISGGEN_ISGGEN_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define ISG_API __attribute__((visibility("default")))
#else
#define ISG_API
#endif

typedef enum isg_status {
  ISG_OK = 0,
  ISG_ERR_INTERNAL = 1,
  ISG_ERR_CONFIG = 2,
  ISG_ERR_DATA = 3,
  ISG_ERR_NUMERIC = 4,
  ISG_ERR_NOT_FOUND = 5,
  ISG_ERR_CONFLICT = 6,
  ISG_ERR_VALIDATION = 7,
  ISG_ERR_IO = 8,
  ISG_ERR_PARSE = 9
} isg_status;

typedef struct isg_model isg_model;
typedef struct isg_server isg_server;

/* Message and detail of the last failure on the calling thread. */
ISG_API const char* isg_last_error(void);
ISG_API const char* isg_last_error_detail(void);

/* Frees strings returned through char** out-parameters. */
ISG_API void isg_string_free(char* s);

/* Resolves defaults < file < ISGGEN_SECTION__KEY env < overrides
 * ("section.key=value") into a canonical JSON config. `file` may be NULL. */
ISG_API isg_status isg_config_resolve(const char* file, const char* const* overrides, int n_overrides,
                                      char** out_json);
/* 16 hex digit content hash of a config document. */
ISG_API isg_status isg_config_hash(const char* config_json, char** out_hash);

/* Commands; each writes a JSON report to *out_report. */
ISG_API isg_status isg_prepare(const char* config_json, char** out_report);
ISG_API isg_status isg_train(const char* config_json, char** out_report);
ISG_API isg_status isg_generate(const char* config_json, char** out_report);
ISG_API isg_status isg_eval(const char* config_json, char** out_report);

ISG_API isg_status isg_model_load(const char* checkpoint_path, isg_model** out);
ISG_API void isg_model_free(isg_model* model);
ISG_API isg_status isg_model_vocabulary(const isg_model* model, char** out_json);

/* HTTP session service over a loaded checkpoint. Port 0 picks a free port;
 * the bound port is written to *out_port. */
ISG_API isg_status isg_server_create(const char* checkpoint_path, const char* store_dir, const char* host, int port,
                                     isg_server** out, int* out_port);
/* Blocks until isg_server_stop is called from another thread. */
ISG_API isg_status isg_server_run(isg_server* server);
ISG_API void isg_server_stop(isg_server* server);
ISG_API void isg_server_free(isg_server* server);

#ifdef __cplusplus
}
#endif

#endif
