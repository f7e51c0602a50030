//! One self-contained Parquet file per shard.
//!
//! Columns: id, source_id, uri, heading_path (list<string>), body,
//! token_count (int32), created_at (int64 epoch-ms UTC), embedding
//! (list<float32>), terms (list<string>), tfs (list<int32>). Shard-level
//! values live in the file's key-value metadata.

use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use arrow_array::builder::{Float32Builder, Int32Builder, ListBuilder, StringBuilder};
use arrow_array::{
    Array, ArrayRef, Float32Array, Int32Array, Int64Array, ListArray, RecordBatch, StringArray,
};
use arrow_schema::{DataType, Field, Schema};
use chrono::DateTime;
use parquet::arrow::arrow_reader::ParquetRecordBatchReaderBuilder;
use parquet::arrow::ArrowWriter;
use parquet::basic::Compression;
use parquet::file::metadata::KeyValue;
use parquet::file::properties::WriterProperties;

use super::{CorpusStats, DenseVector, IndexError, IndexShard, IndexedChunk, SparseVector};
use crate::chunker::Chunk;

pub const FORMAT_VERSION: &str = "1";
pub const SHARD_EXTENSION: &str = ".shard.parquet";

const META_FORMAT: &str = "format_version";
const META_SHARD: &str = "shard_id";
const META_EMBEDDER: &str = "embedder_tag";
const META_DIMENSION: &str = "dimension";
const META_DOC_COUNT: &str = "doc_count";
const META_AVG_LEN: &str = "avg_doc_len";

const ROWS_PER_BATCH: usize = 4096;

fn list_of(item: DataType) -> DataType {
    DataType::List(Arc::new(Field::new("item", item, true)))
}

fn schema() -> Schema {
    Schema::new(vec![
        Field::new("id", DataType::Utf8, false),
        Field::new("source_id", DataType::Utf8, false),
        Field::new("uri", DataType::Utf8, false),
        Field::new("heading_path", list_of(DataType::Utf8), false),
        Field::new("body", DataType::Utf8, false),
        Field::new("token_count", DataType::Int32, false),
        Field::new("created_at", DataType::Int64, false),
        Field::new("embedding", list_of(DataType::Float32), false),
        Field::new("terms", list_of(DataType::Utf8), false),
        Field::new("tfs", list_of(DataType::Int32), false),
    ])
}

fn batch(schema: &Arc<Schema>, rows: &[IndexedChunk]) -> Result<RecordBatch, String> {
    let mut id = StringBuilder::new();
    let mut source = StringBuilder::new();
    let mut uri = StringBuilder::new();
    let mut headings = ListBuilder::new(StringBuilder::new());
    let mut body = StringBuilder::new();
    let mut tokens = Int32Builder::new();
    let mut created = Vec::with_capacity(rows.len());
    let mut embedding = ListBuilder::new(Float32Builder::new());
    let mut terms = ListBuilder::new(StringBuilder::new());
    let mut tfs = ListBuilder::new(Int32Builder::new());

    for row in rows {
        let c = &row.chunk;
        id.append_value(&c.id);
        source.append_value(&c.source_id);
        uri.append_value(&c.uri);
        for h in &c.heading_path {
            headings.values().append_value(h);
        }
        headings.append(true);
        body.append_value(&c.body);
        tokens.append_value(i32::try_from(c.token_count).map_err(|e| e.to_string())?);
        created.push(c.created_at.timestamp_millis());
        embedding.values().append_slice(&row.dense.0);
        embedding.append(true);
        for t in row.sparse.terms() {
            terms.values().append_value(t);
        }
        terms.append(true);
        for &tf in row.sparse.tfs() {
            tfs.values().append_value(i32::try_from(tf).map_err(|e| e.to_string())?);
        }
        tfs.append(true);
    }

    let columns: Vec<ArrayRef> = vec![
        Arc::new(id.finish()),
        Arc::new(source.finish()),
        Arc::new(uri.finish()),
        Arc::new(headings.finish()),
        Arc::new(body.finish()),
        Arc::new(tokens.finish()),
        Arc::new(Int64Array::from(created)),
        Arc::new(embedding.finish()),
        Arc::new(terms.finish()),
        Arc::new(tfs.finish()),
    ];
    // Builders emit nullable list items; cast the schema to what they made.
    let fields: Vec<Field> = schema
        .fields()
        .iter()
        .zip(&columns)
        .map(|(f, c)| Field::new(f.name(), c.data_type().clone(), false))
        .collect();
    RecordBatch::try_new(Arc::new(Schema::new(fields)), columns).map_err(|e| e.to_string())
}

/// Writes the shard to `path`, replacing any existing file.
pub fn save_shard(shard: &IndexShard, path: &Path) -> Result<(), IndexError> {
    let fail = |message: String| IndexError::Write {
        path: path.to_path_buf(),
        message,
    };
    let schema = Arc::new(schema());
    let first = batch(&schema, &shard.chunks[..shard.chunks.len().min(ROWS_PER_BATCH)]).map_err(fail)?;
    let metadata = vec![
        KeyValue::new(META_FORMAT.into(), FORMAT_VERSION.to_string()),
        KeyValue::new(META_SHARD.into(), shard.shard_id.clone()),
        KeyValue::new(META_EMBEDDER.into(), shard.embedder_tag.clone()),
        KeyValue::new(META_DIMENSION.into(), shard.dimension.to_string()),
        KeyValue::new(META_DOC_COUNT.into(), shard.stats.doc_count.to_string()),
        // `{:?}` prints the shortest representation that parses back exactly
        KeyValue::new(META_AVG_LEN.into(), format!("{:?}", shard.stats.avg_doc_len)),
    ];
    let props = WriterProperties::builder()
        .set_compression(Compression::SNAPPY)
        .set_key_value_metadata(Some(metadata))
        .build();
    let file = File::create(path).map_err(|e| fail(e.to_string()))?;
    let mut writer =
        ArrowWriter::try_new(file, first.schema(), Some(props)).map_err(|e| fail(e.to_string()))?;
    writer.write(&first).map_err(|e| fail(e.to_string()))?;
    for rows in shard.chunks.chunks(ROWS_PER_BATCH).skip(1) {
        let b = batch(&schema, rows).map_err(fail)?;
        writer.write(&b).map_err(|e| fail(e.to_string()))?;
    }
    writer.close().map_err(|e| fail(e.to_string()))?;
    Ok(())
}

fn column<'a, T: 'static>(batch: &'a RecordBatch, name: &str) -> Result<&'a T, String> {
    batch
        .column_by_name(name)
        .ok_or_else(|| format!("missing column `{name}`"))?
        .as_any()
        .downcast_ref::<T>()
        .ok_or_else(|| format!("column `{name}` has type {:?}", batch.column_by_name(name).unwrap().data_type()))
}

fn list_values<'a, T: 'static>(list: &'a ListArray, row: usize, name: &str) -> Result<(&'a T, usize, usize), String> {
    let offsets = list.value_offsets();
    let (start, end) = (offsets[row] as usize, offsets[row + 1] as usize);
    let values = list
        .values()
        .as_any()
        .downcast_ref::<T>()
        .ok_or_else(|| format!("column `{name}` has item type {:?}", list.values().data_type()))?;
    Ok((values, start, end))
}

fn strings(list: &ListArray, row: usize, name: &str) -> Result<Vec<String>, String> {
    let (values, start, end) = list_values::<StringArray>(list, row, name)?;
    Ok((start..end).map(|i| values.value(i).to_string()).collect())
}

fn read_batch(batch: &RecordBatch, out: &mut Vec<IndexedChunk>, dimension: usize) -> Result<(), String> {
    let id = column::<StringArray>(batch, "id")?;
    let source = column::<StringArray>(batch, "source_id")?;
    let uri = column::<StringArray>(batch, "uri")?;
    let headings = column::<ListArray>(batch, "heading_path")?;
    let body = column::<StringArray>(batch, "body")?;
    let tokens = column::<Int32Array>(batch, "token_count")?;
    let created = column::<Int64Array>(batch, "created_at")?;
    let embedding = column::<ListArray>(batch, "embedding")?;
    let terms = column::<ListArray>(batch, "terms")?;
    let tfs = column::<ListArray>(batch, "tfs")?;

    for row in 0..batch.num_rows() {
        let (emb, start, end) = list_values::<Float32Array>(embedding, row, "embedding")?;
        if end - start != dimension {
            return Err(format!(
                "row {row}: embedding has {} values, expected {dimension}",
                end - start
            ));
        }
        let dense = DenseVector(emb.values()[start..end].to_vec());
        let (tf_values, tf_start, tf_end) = list_values::<Int32Array>(tfs, row, "tfs")?;
        let tf_list = tf_values.values()[tf_start..tf_end]
            .iter()
            .map(|&v| u32::try_from(v).map_err(|_| format!("row {row}: negative term frequency")))
            .collect::<Result<Vec<u32>, String>>()?;
        let sparse = SparseVector::new(strings(terms, row, "terms")?, tf_list)
            .map_err(|e| format!("row {row}: {e}"))?;
        let token_count = u32::try_from(tokens.value(row)).map_err(|_| format!("row {row}: negative token_count"))?;
        let created_at = DateTime::from_timestamp_millis(created.value(row))
            .ok_or_else(|| format!("row {row}: created_at out of range"))?;
        out.push(IndexedChunk {
            chunk: Chunk {
                id: id.value(row).to_string(),
                source_id: source.value(row).to_string(),
                uri: uri.value(row).to_string(),
                heading_path: strings(headings, row, "heading_path")?,
                body: body.value(row).to_string(),
                token_count,
                created_at,
            },
            sparse,
            dense,
        });
    }
    Ok(())
}

/// Reads a shard written by [`save_shard`], recomputing corpus statistics and
/// checking them against the stored values.
pub fn load_shard(path: &Path) -> Result<IndexShard, IndexError> {
    let unreadable = |message: String| IndexError::Unreadable {
        path: path.to_path_buf(),
        message,
    };
    let schema_err = |message: String| IndexError::Schema {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(|e| unreadable(e.to_string()))?;
    let builder = ParquetRecordBatchReaderBuilder::try_new(file).map_err(|e| unreadable(e.to_string()))?;

    let kv: Vec<(String, Option<String>)> = builder
        .metadata()
        .file_metadata()
        .key_value_metadata()
        .map(|kv| kv.iter().map(|k| (k.key.clone(), k.value.clone())).collect())
        .unwrap_or_default();
    let meta = |key: &str| -> Result<String, IndexError> {
        kv.iter()
            .find(|(k, _)| k == key)
            .and_then(|(_, v)| v.clone())
            .ok_or_else(|| schema_err(format!("missing metadata key `{key}`")))
    };
    let version = meta(META_FORMAT)?;
    if version != FORMAT_VERSION {
        return Err(schema_err(format!("unsupported format_version {version}")));
    }
    let shard_id = meta(META_SHARD)?;
    let embedder_tag = meta(META_EMBEDDER)?;
    let dimension: usize = meta(META_DIMENSION)?
        .parse()
        .map_err(|e| schema_err(format!("dimension: {e}")))?;
    let stored_count: usize = meta(META_DOC_COUNT)?
        .parse()
        .map_err(|e| schema_err(format!("doc_count: {e}")))?;
    let stored_avg: f64 = meta(META_AVG_LEN)?
        .parse()
        .map_err(|e| schema_err(format!("avg_doc_len: {e}")))?;

    let expected = schema();
    let actual = builder.schema().clone();
    for field in expected.fields() {
        let found = actual
            .field_with_name(field.name())
            .map_err(|_| schema_err(format!("missing column `{}`", field.name())))?;
        let same_shape = match (field.data_type(), found.data_type()) {
            (DataType::List(a), DataType::List(b)) => a.data_type() == b.data_type(),
            (a, b) => a == b,
        };
        if !same_shape {
            return Err(schema_err(format!(
                "column `{}` has type {:?}, expected {:?}",
                field.name(),
                found.data_type(),
                field.data_type()
            )));
        }
    }

    let reader = builder.build().map_err(|e| unreadable(e.to_string()))?;
    let mut chunks = Vec::with_capacity(stored_count);
    for batch in reader {
        let batch = batch.map_err(|e| unreadable(e.to_string()))?;
        read_batch(&batch, &mut chunks, dimension).map_err(schema_err)?;
    }

    let stats = CorpusStats::compute(chunks.iter().map(|c| (&c.sparse, c.chunk.token_count)));
    if stats.doc_count != stored_count {
        return Err(IndexError::StatsMismatch {
            path: path.to_path_buf(),
            message: format!("doc_count {stored_count} stored, {} rows read", stats.doc_count),
        });
    }
    if (stats.avg_doc_len - stored_avg).abs() > 1e-6 {
        return Err(IndexError::StatsMismatch {
            path: path.to_path_buf(),
            message: format!("avg_doc_len {stored_avg} stored, {} recomputed", stats.avg_doc_len),
        });
    }
    Ok(IndexShard {
        shard_id,
        embedder_tag,
        dimension,
        chunks,
        stats,
    })
}
