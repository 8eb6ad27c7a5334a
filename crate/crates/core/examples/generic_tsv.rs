//! Writes a small interaction file with a header and shuffled columns, then
//! reads it back with a column map.

use std::fs;

use fairdgcl::dataset::{load_generic_tsv, AttributeMapping, ColumnMap, ColumnRef};

fn main() -> fairdgcl::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let inter = dir.path().join("ratings.tsv");
    let attrs = dir.path().join("users.tsv");
    fs::write(
        &inter,
        "ts\titem\tuser\n\
         100\tdune\talice\n\
         200\tsolaris\talice\n\
         150\tdune\tbob\n\
         300\tstalker\tcarol\n",
    )
    .expect("write");
    fs::write(&attrs, "alice\tF\nbob\tM\ncarol\tF\n").expect("write");

    let columns = ColumnMap {
        delimiter: "\t".into(),
        has_header: true,
        user: ColumnRef::Name("user".into()),
        item: ColumnRef::Name("item".into()),
        rating: None,
        timestamp: Some(ColumnRef::Name("ts".into())),
        attr_delimiter: "\t".into(),
        attr_has_header: false,
        attr_user: ColumnRef::Index(0),
        attr_value: ColumnRef::Index(1),
        mapping: AttributeMapping {
            zero: vec!["M".into()],
            one: vec!["F".into()],
        },
    };
    let ds = load_generic_tsv(&inter, &attrs, &columns)?;
    println!("{} users, {} items", ds.n_users(), ds.n_items());
    for r in &ds.records {
        println!(
            "{:>6} -> {:<8} t={:?} group {}",
            ds.user_ids[r.user_id],
            ds.item_ids[r.item_id],
            r.timestamp,
            ds.partition.label(r.user_id)
        );
    }
    Ok(())
}
